#pragma once

#include <string>

#include "dgad/data.hpp"
#include "dgad/eval.hpp"
#include "dgad/model.hpp"
#include "dgad/trainer.hpp"

namespace dgad {

/// Flat run configuration; parses from `section.key = value` text. Every
/// field has a default, unknown keys are rejected, flag overrides are applied
/// on top by the CLI.
struct RunConfig {
    // data
    int data_size = 64;
    int data_n = 2000;
    std::uint64_t data_seed = 1234;
    int data_box_min = 14;
    int data_box_max = 40;

    // model
    std::string model_channels = "64,128,256";
    int model_res_units = 2;
    int model_dense_l = 1;
    double model_clamp_lo = 0.5;
    double model_clamp_hi = 0.8;
    int model_n_tok = 16;
    int model_d_sem = 64;
    int model_d_attn = 64;
    std::string model_sem_channels = "32,64,128";
    int model_time_dim = 128;
    std::uint64_t model_seed = 42;

    // schedule
    int schedule_t = 100;
    double schedule_beta_start = 1e-4;
    double schedule_beta_end = 0.02;

    // train
    double train_lr = 1e-4;
    int train_batch = 8;
    int train_steps = 5000;
    std::uint64_t train_seed = 7;
    double train_cond_drop = 0.1;
    std::string train_precision = "f32";  // f32 | f64
    std::string train_freeze = "";        // csv of group names, or "staged"
    int train_log_every = 50;
    std::string train_arm = "full";

    // sample (defaults follow the reference inference setup)
    int sample_steps = 50;
    double sample_cfg = 7.5;
    std::uint64_t sample_seed = 0;

    // eval
    std::string eval_arms = "full,no_dense_ca,dense_ca_both_stages,random_input_weights,no_layout_concat";
    int eval_steps = 50;
    double eval_cfg = 7.5;
    int eval_max_samples = 0;  // 0 = whole test split
    std::string eval_seeds = "1,2,3";
};

/// Applies one `key = value` assignment; throws on unknown key or bad value.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses a config file (`#` comments, blank lines allowed).
RunConfig load_config_file(const std::string& path);

/// Full dump, one key = value per line; reparsing reproduces the config.
std::string dump_config(const RunConfig& cfg);

std::vector<int> parse_int_list(const std::string& csv);
std::vector<std::uint64_t> parse_u64_list(const std::string& csv);

ModelConfig make_model_config(const RunConfig& cfg, Arm arm);
TrainConfig make_train_config(const RunConfig& cfg);
DataCfg make_data_config(const RunConfig& cfg);
NoiseSchedule make_schedule(const RunConfig& cfg);
SampleOpts make_sample_opts(const RunConfig& cfg);

}  // namespace dgad
