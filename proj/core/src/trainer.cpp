#include "dgad/trainer.hpp"

#include <cmath>
#include <sstream>

#include "dgad/checkpoint.hpp"

namespace dgad {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (cond_drop_prob < 0.0 || cond_drop_prob >= 1.0)
        throw std::invalid_argument("train: cond_drop_prob must be in [0,1)");
    if (batch_size < 1 || steps < 0) throw std::invalid_argument("train: bad batch/steps");
}

std::set<std::string> staged_regime_freeze() {
    return {"input_conv", "backbone", "time_embed", "ref_net", "semantic_encoder"};
}

template <typename T>
void adam_update(TensorT<T>& value, const TensorT<T>& grad, TensorT<T>& m, TensorT<T>& v,
                 long step_one_based, const TrainConfig& cfg) {
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_one_based));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_one_based));
    for (std::size_t i = 0; i < value.numel(); ++i) {
        const double gi = static_cast<double>(grad.data[i]);
        const double mi = b1 * static_cast<double>(m.data[i]) + (1.0 - b1) * gi;
        const double vi = b2 * static_cast<double>(v.data[i]) + (1.0 - b2) * gi * gi;
        m.data[i] = static_cast<T>(mi);
        v.data[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        value.data[i] = static_cast<T>(static_cast<double>(value.data[i]) -
                                       cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps_adam));
    }
}

template <typename T>
Trainer<T>::Trainer(DgadModelT<T>& model, const NoiseSchedule& schedule, const TrainConfig& cfg,
                    const std::vector<CompositeSample>& train_set)
    : model_(model), schedule_(schedule), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    if (train_set.empty()) throw std::invalid_argument("trainer: empty training set");
    apply_freeze_mask(cfg_.freeze);
    prepare(train_set);
    opt_.m.reserve(model_.params().size());
    opt_.v.reserve(model_.params().size());
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
        const auto& p = model_.params()[static_cast<int>(i)];
        opt_.m.push_back(TensorT<T>(p.value.shape));
        opt_.v.push_back(TensorT<T>(p.value.shape));
    }
}

template <typename T>
void Trainer<T>::prepare(const std::vector<CompositeSample>& samples) {
    const int s_img = model_.config().image_size;
    data_.reserve(samples.size());
    for (const auto& smp : samples) {
        if (smp.bg.dim(1) != s_img)
            throw std::invalid_argument("trainer: sample size does not match model config");
        Prepared p;
        p.obj = smp.obj.template cast<T>();
        TensorT<T> bg({1, 3, s_img, s_img});
        std::copy(smp.bg.data.begin(), smp.bg.data.end(), bg.data.begin());
        TensorT<T> tgt({1, 3, s_img, s_img});
        std::copy(smp.tgt.data.begin(), smp.tgt.data.end(), tgt.data.begin());
        auto f_bg = model_.latent_encode(bg);
        auto f_tgt = model_.latent_encode(tgt);
        p.f_bg = TensorT<T>({f_bg.dim(1), f_bg.dim(2), f_bg.dim(3)}, std::move(f_bg.data));
        p.f_tgt = TensorT<T>({f_tgt.dim(1), f_tgt.dim(2), f_tgt.dim(3)}, std::move(f_tgt.data));
        auto m = model_.latent_mask(smp.box);
        p.m_lat = TensorT<T>({1, m.dim(2), m.dim(3)}, std::move(m.data));
        data_.push_back(std::move(p));
    }
}

template <typename T>
double Trainer<T>::step(std::ostream* log) {
    const int b = cfg_.batch_size;
    const int s_lat = model_.config().latent_size();
    const int c_lat = model_.config().latent_channels;
    const int s_img = model_.config().image_size;

    // batch assembly: indices, timesteps, noise, conditioning drops — all
    // drawn in a fixed order from the trainer stream
    std::vector<int> t_vec(static_cast<std::size_t>(b));
    std::vector<char> drop(static_cast<std::size_t>(b));
    TensorT<T> obj({b, 3, s_img, s_img});
    TensorT<T> f_bg({b, c_lat, s_lat, s_lat});
    TensorT<T> m_lat({b, 1, s_lat, s_lat});
    TensorT<T> f_tgt_t({b, c_lat, s_lat, s_lat});
    TensorT<T> eps({b, c_lat, s_lat, s_lat});

    const std::size_t lat_n = static_cast<std::size_t>(c_lat) * s_lat * s_lat;
    for (int i = 0; i < b; ++i) {
        const auto& smp = data_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(data_.size()) - 1))];
        t_vec[static_cast<std::size_t>(i)] = rng_.uniform_int(0, schedule_.steps - 1);
        drop[static_cast<std::size_t>(i)] = rng_.uniform() < cfg_.cond_drop_prob ? 1 : 0;
        std::copy_n(smp.obj.data.data(), smp.obj.numel(), obj.data.data() + static_cast<std::size_t>(i) * smp.obj.numel());
        std::copy_n(smp.f_bg.data.data(), lat_n, f_bg.data.data() + static_cast<std::size_t>(i) * lat_n);
        std::copy_n(smp.m_lat.data.data(), smp.m_lat.numel(),
                    m_lat.data.data() + static_cast<std::size_t>(i) * smp.m_lat.numel());
        const double ab = schedule_.alpha_bar[static_cast<std::size_t>(t_vec[static_cast<std::size_t>(i)])];
        const T wa = static_cast<T>(std::sqrt(ab));
        const T we = static_cast<T>(std::sqrt(1.0 - ab));
        for (std::size_t j = 0; j < lat_n; ++j) {
            const T e = static_cast<T>(rng_.normal());
            eps.data[static_cast<std::size_t>(i) * lat_n + j] = e;
            f_tgt_t.data[static_cast<std::size_t>(i) * lat_n + j] = wa * smp.f_tgt.data[j] + we * e;
        }
    }

    TensorT<T> x_in = model_.config().arm == Arm::NoLayoutConcat
                          ? f_tgt_t
                          : assemble_input(m_lat, f_bg, f_tgt_t);

    Graph<T> g;
    auto bound = model_.bind(g, true);
    auto obj_ref = g.leaf(obj, false);
    auto tokens = model_.semantic_encode_g(g, bound, obj_ref);
    auto f_r = model_.reference_forward_g(g, bound, obj_ref);

    // classifier-free training: drop the object conditions (tokens and
    // reference features), keep mask and background
    bool any_drop = false;
    for (char d : drop) any_drop |= d != 0;
    if (any_drop) {
        auto batch_mask = [&](const std::vector<int>& shape) {
            TensorT<T> m(shape);
            const std::size_t per = m.numel() / static_cast<std::size_t>(b);
            for (int i = 0; i < b; ++i)
                std::fill_n(m.data.data() + static_cast<std::size_t>(i) * per, per,
                            drop[static_cast<std::size_t>(i)] ? T(0) : T(1));
            return m;
        };
        tokens = g.mul(tokens, g.leaf(batch_mask(g.value(tokens).shape), false));
        for (auto& f : f_r) f = g.mul(f, g.leaf(batch_mask(g.value(f).shape), false));
    }

    auto temb = g.leaf(model_.time_embedding(t_vec), false);
    auto eps_pred = model_.unet_forward_g(g, bound, g.leaf(x_in, false), temb, tokens, f_r, nullptr);
    auto loss_ref = g.mean_sq_diff(eps_pred, g.leaf(eps, false));
    const double loss = static_cast<double>(g.value(loss_ref).data[0]);

    double t_mean = 0;
    for (int ti : t_vec) t_mean += ti;
    t_mean /= b;

    if (!std::isfinite(loss)) {
        // abort the step; parameters and moments stay untouched
        ++opt_.step;
        trace_.push_back(loss);
        if (log)
            (*log) << "step=" << opt_.step << " loss=" << loss << " t_mean=" << t_mean
                   << " event=non_finite_aborted\n";
        return loss;
    }

    g.backward(loss_ref);
    ++opt_.step;
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
        auto& p = model_.params()[static_cast<int>(i)];
        if (!p.trainable) continue;
        adam_update(p.value, g.grad(bound.refs[i]), opt_.m[i], opt_.v[i], opt_.step, cfg_);
    }

    trace_.push_back(loss);
    if (log && (opt_.step % cfg_.log_every == 0 || opt_.step == 1))
        (*log) << "step=" << opt_.step << " loss=" << loss << " t_mean=" << t_mean << "\n";
    return loss;
}

template <typename T>
void Trainer<T>::run(int steps, std::ostream* log) {
    for (int i = 0; i < steps; ++i) step(log);
}

template <typename T>
void Trainer<T>::apply_freeze_mask(const std::set<std::string>& groups) {
    const auto known = model_.params().group_names();
    for (const auto& gname : groups)
        if (!known.count(gname)) throw std::invalid_argument("freeze: unknown parameter group " + gname);
    cfg_.freeze = groups;
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
        auto& p = model_.params()[static_cast<int>(i)];
        p.trainable = !groups.count(p.group);
    }
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::string& path) const {
    Archive a;
    a.meta = model_config_meta(model_.config());
    a.meta["kind"] = "trainer";
    a.meta["step"] = std::to_string(opt_.step);
    a.meta["rng_state"] = std::to_string(rng_.state());
    std::string frozen;
    for (const auto& gname : cfg_.freeze) frozen += (frozen.empty() ? "" : ",") + gname;
    a.meta["freeze"] = frozen;
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
        const auto& p = model_.params()[static_cast<int>(i)];
        a.add_tensor(p.name, p.value);
        a.add_tensor("opt.m." + p.name, opt_.m[i]);
        a.add_tensor("opt.v." + p.name, opt_.v[i]);
    }
    save_archive(path, a);
}

template <typename T>
void Trainer<T>::load_checkpoint(const std::string& path) {
    Archive a = load_archive(path);
    if (a.meta.count("kind") && a.meta["kind"] != "trainer")
        throw std::runtime_error("checkpoint: not a trainer checkpoint: " + path);
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
        auto& p = model_.params()[static_cast<int>(i)];
        const auto* entry = a.find(p.name);
        const auto* m_entry = a.find("opt.m." + p.name);
        const auto* v_entry = a.find("opt.v." + p.name);
        if (!entry || !m_entry || !v_entry)
            throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (entry->shape != p.value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            p.value.data[j] = static_cast<T>(entry->data[j]);
            opt_.m[i].data[j] = static_cast<T>(m_entry->data[j]);
            opt_.v[i].data[j] = static_cast<T>(v_entry->data[j]);
        }
    }
    opt_.step = std::stol(a.meta.at("step"));
    rng_.set_state(std::stoull(a.meta.at("rng_state")));
}

template <typename T>
std::uint64_t group_checksum(const ParamStore<T>& store, const std::string& group) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[static_cast<int>(i)];
        if (p.group != group) continue;
        h = fnv1a(p.value.data.data(), p.value.numel() * sizeof(T), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// model checkpoints and config round trip
// ---------------------------------------------------------------------------

namespace {

std::string ints_csv(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<int> csv_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

}  // namespace

std::map<std::string, std::string> model_config_meta(const ModelConfig& cfg) {
    std::map<std::string, std::string> m;
    m["model.image_size"] = std::to_string(cfg.image_size);
    m["model.channels"] = ints_csv(cfg.channels);
    m["model.res_units"] = std::to_string(cfg.res_units);
    m["model.time_dim"] = std::to_string(cfg.time_dim);
    m["model.n_tok"] = std::to_string(cfg.n_tok);
    m["model.d_sem"] = std::to_string(cfg.d_sem);
    m["model.d_attn"] = std::to_string(cfg.d_attn);
    m["model.sem_channels"] = ints_csv(cfg.sem_channels);
    m["model.dense_l"] = std::to_string(cfg.dense_l);
    m["model.clamp_lo"] = std::to_string(cfg.clamp_lo);
    m["model.clamp_hi"] = std::to_string(cfg.clamp_hi);
    m["model.arm"] = arm_to_string(cfg.arm);
    return m;
}

ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig cfg;
    auto get = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error(std::string("checkpoint: missing meta ") + key);
        return it->second;
    };
    cfg.image_size = std::stoi(get("model.image_size"));
    cfg.channels = csv_ints(get("model.channels"));
    cfg.res_units = std::stoi(get("model.res_units"));
    cfg.time_dim = std::stoi(get("model.time_dim"));
    cfg.n_tok = std::stoi(get("model.n_tok"));
    cfg.d_sem = std::stoi(get("model.d_sem"));
    cfg.d_attn = std::stoi(get("model.d_attn"));
    cfg.sem_channels = csv_ints(get("model.sem_channels"));
    cfg.dense_l = std::stoi(get("model.dense_l"));
    cfg.clamp_lo = std::stod(get("model.clamp_lo"));
    cfg.clamp_hi = std::stod(get("model.clamp_hi"));
    cfg.arm = arm_from_string(get("model.arm"));
    return cfg;
}

template <typename T>
void save_model_checkpoint(const std::string& path, const DgadModelT<T>& model,
                           const std::map<std::string, std::string>& extra_meta) {
    Archive a;
    a.meta = model_config_meta(model.config());
    a.meta["kind"] = "model";
    for (const auto& [k, v] : extra_meta) a.meta[k] = v;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[static_cast<int>(i)];
        a.add_tensor(p.name, p.value);
    }
    save_archive(path, a);
}

template <typename T>
DgadModelT<T> load_model_checkpoint(const std::string& path,
                                    std::map<std::string, std::string>* meta_out) {
    Archive a = load_archive(path);
    ModelConfig cfg = model_config_from_meta(a.meta);
    DgadModelT<T> model(cfg, 0);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& p = model.params()[static_cast<int>(i)];
        const auto* entry = a.find(p.name);
        if (!entry) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (entry->shape != p.value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        for (std::size_t j = 0; j < p.value.numel(); ++j) p.value.data[j] = static_cast<T>(entry->data[j]);
    }
    if (meta_out) *meta_out = a.meta;
    return model;
}

#define DGAD_INSTANTIATE_TRAINER(T)                                                                \
    template void adam_update<T>(TensorT<T>&, const TensorT<T>&, TensorT<T>&, TensorT<T>&, long,   \
                                 const TrainConfig&);                                              \
    template class Trainer<T>;                                                                     \
    template std::uint64_t group_checksum<T>(const ParamStore<T>&, const std::string&);            \
    template void save_model_checkpoint<T>(const std::string&, const DgadModelT<T>&,               \
                                           const std::map<std::string, std::string>&);             \
    template DgadModelT<T> load_model_checkpoint<T>(const std::string&,                            \
                                                    std::map<std::string, std::string>*);

DGAD_INSTANTIATE_TRAINER(float)
DGAD_INSTANTIATE_TRAINER(double)
#undef DGAD_INSTANTIATE_TRAINER

}  // namespace dgad
