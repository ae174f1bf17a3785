#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dgad/graph.hpp"

namespace dgad {

struct NamedTensor64 {
    std::string name;
    Tensor64 value;
};

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    std::map<std::string, double> per_param_errors;
    bool passed = false;
    std::vector<std::string> retried;  // params re-tested after a kink hit
};

/// Builds the forward computation under test. Receives one bound leaf per
/// parameter (same order as the params vector) and returns the scalar loss.
using GraphBuilder64 = std::function<Graph64::Ref(Graph64&, const std::vector<Graph64::Ref>&)>;

/// Central-difference gradient verification at 64-bit.
/// rel error uses denominator max(|analytic|, |numeric|, 1e-8). When a
/// parameter fails, it is jittered once (non-differentiable points such as a
/// clamp edge or an exact relu kink) and re-tested; a second failure is final.
GradCheckReport grad_check(const std::string& op_name, const GraphBuilder64& build,
                           std::vector<NamedTensor64> params, double eps, double tol);

}  // namespace dgad
