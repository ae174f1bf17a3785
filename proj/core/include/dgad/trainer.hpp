#pragma once

#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dgad/data.hpp"
#include "dgad/model.hpp"
#include "dgad/schedule.hpp"

namespace dgad {

struct TrainConfig {
    double lr = 1e-4;  // toy default; the fine-tuning value 1e-5 stays selectable
    int batch_size = 8;
    int steps = 5000;
    double cond_drop_prob = 0.1;
    std::uint64_t seed = 7;
    std::set<std::string> freeze;
    int log_every = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;

    void validate() const;
};

/// Parameter names left trainable by the staged-training regime
/// (backbone and reference net fixed, attention modules trained).
std::set<std::string> staged_regime_freeze();

template <typename T>
struct AdamState {
    std::vector<TensorT<T>> m, v;
    long step = 0;
};

/// One Adam update on a single tensor; split out so tests can drive it
/// against a scalar oracle.
template <typename T>
void adam_update(TensorT<T>& value, const TensorT<T>& grad, TensorT<T>& m, TensorT<T>& v,
                 long step_one_based, const TrainConfig& cfg);

template <typename T>
class Trainer {
public:
    /// Training samples are preprocessed (latents, masks) at construction.
    Trainer(DgadModelT<T>& model, const NoiseSchedule& schedule, const TrainConfig& cfg,
            const std::vector<CompositeSample>& train_set);

    /// One optimization step; returns the loss. A non-finite loss aborts the
    /// update (parameters and moments untouched) and is logged as an event.
    double step(std::ostream* log = nullptr);

    void run(int steps, std::ostream* log = nullptr);

    /// Marks the named parameter groups frozen; unknown names are rejected.
    void apply_freeze_mask(const std::set<std::string>& groups);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    long current_step() const { return opt_.step; }
    const std::vector<double>& loss_trace() const { return trace_; }
    DgadModelT<T>& model() { return model_; }
    const NoiseSchedule& schedule() const { return schedule_; }

private:
    struct Prepared {
        TensorT<T> obj;    // [3,S,S]
        TensorT<T> f_bg;   // [C,s,s]
        TensorT<T> f_tgt;  // [C,s,s]
        TensorT<T> m_lat;  // [1,s,s]
    };

    DgadModelT<T>& model_;
    NoiseSchedule schedule_;
    TrainConfig cfg_;
    std::vector<Prepared> data_;
    AdamState<T> opt_;
    SplitMix64 rng_;
    std::vector<double> trace_;

    void prepare(const std::vector<CompositeSample>& samples);
};

/// FNV-1a over a parameter group's raw values; used by freeze-invariance
/// checks.
template <typename T>
std::uint64_t group_checksum(const ParamStore<T>& store, const std::string& group);

// model <-> archive plumbing
std::map<std::string, std::string> model_config_meta(const ModelConfig& cfg);
ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta);

template <typename T>
void save_model_checkpoint(const std::string& path, const DgadModelT<T>& model,
                           const std::map<std::string, std::string>& extra_meta = {});

/// Constructs the model from the archived config and loads every tensor.
template <typename T>
DgadModelT<T> load_model_checkpoint(const std::string& path,
                                    std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace dgad
