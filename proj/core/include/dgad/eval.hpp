#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "dgad/data.hpp"
#include "dgad/trainer.hpp"

namespace dgad {

struct SampleOpts {
    int steps = 50;
    double cfg_scale = 7.5;
    SamplerMode mode = SamplerMode::Ddim;
};

/// PSNR over box pixels only; peak 2.0 for [-1,1] images, capped at 99 dB.
double masked_psnr(const Tensor32& pred, const Tensor32& tgt, const BoxI& box);
double full_psnr(const Tensor32& pred, const Tensor32& tgt);

/// Normalized cross-correlation between the prediction's box region and the
/// ground-truth transformed render (the target restricted to the box),
/// clamped to [0,1]. 1.0 means exact geometric placement.
double transform_score(const Tensor32& pred, const CompositeSample& sample);

struct EvalReport {
    std::string arm = "full";
    int sample_count = 0;
    double masked_psnr_mean = 0;
    double full_psnr_mean = 0;
    double transform_score_mean = 0;
    double baseline_masked_psnr_mean = 0;   // copy-background prediction
    double paste_transform_score_mean = 0;  // untransformed paste prediction
    std::uint64_t manifest_hash = 0;
};

/// Runs compose() over the dataset's test split (or at most max_samples of
/// it) and aggregates the metrics; per-sample seeds come from the manifest.
EvalReport evaluate_model(const DgadModel32& model, const NoiseSchedule& schedule,
                          const std::string& dataset_dir, const SampleOpts& opts,
                          int max_samples = 0, std::ostream* progress = nullptr);

/// Trains one model per arm under identical seeds, datasets and budgets, then
/// evaluates each on the shared test split. Arm comparability is asserted via
/// manifest hash equality.
std::vector<EvalReport> run_ablation(const std::vector<Arm>& arms, const std::string& dataset_dir,
                                     const ModelConfig& base_model, const TrainConfig& train_cfg,
                                     const SampleOpts& eval_opts, int eval_max_samples = 0,
                                     std::ostream* progress = nullptr);

/// Structured-text report: one table plus machine-readable key=value lines.
void write_eval_reports(std::ostream& out, const std::vector<EvalReport>& reports);

/// Heat overlay: the attention map is bicubic-upsampled to the scene size and
/// alpha-blended at 0.5 toward the heat color.
Tensor32 attention_overlay(const Tensor32& scene, const Tensor32& amap);
void render_attention_overlay(const Tensor32& scene, const Tensor32& amap, const std::string& out_path);

}  // namespace dgad
