#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dgad/model.hpp"
#include "dgad/tensor.hpp"

namespace dgad {

/// Procedural object: a convex outline (ellipse, or polygon with vertices on
/// an ellipse) carrying a two-color stripe or checker texture. Everything is
/// defined in unit-scale local coordinates so the same spec renders both the
/// object canvas and its transformed composite.
struct ObjectSpec {
    bool is_ellipse = true;
    double ex = 1.0, ey = 0.7;                      // half-axes
    std::vector<std::array<double, 2>> verts;       // polygon only, CCW
    bool is_stripes = true;
    double tex_freq = 1.2, tex_phase = 0.0, tex_angle = 0.0;
    std::array<double, 3> color_a{}, color_b{};

    bool contains(double u, double v) const;
    std::array<double, 3> color_at(double u, double v) const;
    /// Half-extents of the outline rotated by theta (radians).
    void extents(double theta, double& hx, double& hy) const;
};

struct DataCfg {
    int image_size = 64;
    int box_min = 14;
    int box_max = 40;
    /// Identity mode: theta = 0, scale = 1, natural render scale, box sized
    /// and aligned so the composite equals a pure paste of the object canvas.
    bool force_identity = false;

    void validate() const;
};

/// One training quadruple plus the transform applied inside the box.
struct CompositeSample {
    Tensor32 obj, bg, tgt;  // [3,S,S] in [-1,1]
    BoxI box;
    double theta_deg = 0.0;
    double scale = 1.0;
    double kappa = 0.0;  // pixels per unit used in the composite
    std::uint64_t seed = 0;
    ObjectSpec spec;
};

/// Deterministic per seed; identical seeds give byte-identical samples.
CompositeSample generate_sample(std::uint64_t seed, const DataCfg& cfg);

/// Copy-paste straw man: the object rendered into the same box with no
/// rotation at box-fit scale, on the sample's background.
Tensor32 render_untransformed_paste(const CompositeSample& sample, const DataCfg& cfg);

// ---- image files ----
void write_ppm(const std::string& path, const Tensor32& image);   // [3,H,W] in [-1,1]
Tensor32 read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor32& mask);    // [1,H,W] in [0,1]
Tensor32 read_pgm(const std::string& path);

/// Quantization used by the 8-bit formats.
inline unsigned char quantize8(float v) {
    const float q = (v + 1.0f) * 127.5f;
    return static_cast<unsigned char>(std::min(255.0f, std::max(0.0f, std::round(q))));
}
inline float dequantize8(unsigned char q) { return static_cast<float>(q) / 127.5f - 1.0f; }

void write_sample(const std::string& dir, const CompositeSample& sample);
/// Reads the 8-bit-quantized images plus meta; the object spec is not stored,
/// regenerate via generate_sample(sample.seed, cfg) when needed.
CompositeSample read_sample(const std::string& dir);

// ---- dataset ----
struct ManifestEntry {
    int index = 0;
    std::string split;  // train | val | test
    std::uint64_t seed = 0;
    std::string dir;    // relative to the dataset root
};

struct DatasetManifest {
    int n = 0;
    int image_size = 64;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> split(const std::string& name) const;
};

/// Samples use seeds seed..seed+n-1, split 90/5/5 by index (at least one
/// sample per split). Refuses a non-empty out_dir unless force.
DatasetManifest build_dataset(int n, std::uint64_t seed, const std::string& out_dir, bool force,
                              const DataCfg& cfg = DataCfg{});

DatasetManifest read_manifest(const std::string& dataset_dir);
std::uint64_t manifest_hash(const std::string& dataset_dir);

}  // namespace dgad
