#pragma once

#include <vector>

#include "dgad/grad_check.hpp"

namespace dgad {

struct GradientSuiteResult {
    std::vector<GradCheckReport> reports;
    bool passed = false;
    double max_rel_error = 0.0;
};

/// Finite-difference verification of every trainable block on 8x8-image
/// configurations at 64-bit: semantic cross-attention, dense cross-attention
/// including the gate, U-Net conv units, the time embedding, the reference
/// network, the semantic encoder, and the fully assembled denoiser.
GradientSuiteResult gradient_suite(double tol = 1e-4, double eps = 1e-5);

}  // namespace dgad
