#include "dgad/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dgad {

namespace {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename V>
Field make_field(V RunConfig::* member) {
    Field f;
    f.set = [member](RunConfig& cfg, const std::string& v) {
        if constexpr (std::is_same_v<V, int>) cfg.*member = std::stoi(v);
        else if constexpr (std::is_same_v<V, double>) cfg.*member = std::stod(v);
        else if constexpr (std::is_same_v<V, std::uint64_t>) cfg.*member = std::stoull(v);
        else cfg.*member = v;
    };
    f.get = [member](const RunConfig& cfg) {
        if constexpr (std::is_same_v<V, std::string>) return cfg.*member;
        else {
            std::ostringstream os;
            os << cfg.*member;
            return os.str();
        }
    };
    return f;
}

const std::map<std::string, Field>& field_table() {
    static const std::map<std::string, Field> table = {
        {"data.size", make_field(&RunConfig::data_size)},
        {"data.n", make_field(&RunConfig::data_n)},
        {"data.seed", make_field(&RunConfig::data_seed)},
        {"data.box_min", make_field(&RunConfig::data_box_min)},
        {"data.box_max", make_field(&RunConfig::data_box_max)},
        {"model.channels", make_field(&RunConfig::model_channels)},
        {"model.res_units", make_field(&RunConfig::model_res_units)},
        {"model.dense_l", make_field(&RunConfig::model_dense_l)},
        {"model.clamp_lo", make_field(&RunConfig::model_clamp_lo)},
        {"model.clamp_hi", make_field(&RunConfig::model_clamp_hi)},
        {"model.n_tok", make_field(&RunConfig::model_n_tok)},
        {"model.d_sem", make_field(&RunConfig::model_d_sem)},
        {"model.d_attn", make_field(&RunConfig::model_d_attn)},
        {"model.sem_channels", make_field(&RunConfig::model_sem_channels)},
        {"model.time_dim", make_field(&RunConfig::model_time_dim)},
        {"model.seed", make_field(&RunConfig::model_seed)},
        {"schedule.t", make_field(&RunConfig::schedule_t)},
        {"schedule.beta_start", make_field(&RunConfig::schedule_beta_start)},
        {"schedule.beta_end", make_field(&RunConfig::schedule_beta_end)},
        {"train.lr", make_field(&RunConfig::train_lr)},
        {"train.batch", make_field(&RunConfig::train_batch)},
        {"train.steps", make_field(&RunConfig::train_steps)},
        {"train.seed", make_field(&RunConfig::train_seed)},
        {"train.cond_drop", make_field(&RunConfig::train_cond_drop)},
        {"train.precision", make_field(&RunConfig::train_precision)},
        {"train.freeze", make_field(&RunConfig::train_freeze)},
        {"train.log_every", make_field(&RunConfig::train_log_every)},
        {"train.arm", make_field(&RunConfig::train_arm)},
        {"sample.steps", make_field(&RunConfig::sample_steps)},
        {"sample.cfg", make_field(&RunConfig::sample_cfg)},
        {"sample.seed", make_field(&RunConfig::sample_seed)},
        {"eval.arms", make_field(&RunConfig::eval_arms)},
        {"eval.steps", make_field(&RunConfig::eval_steps)},
        {"eval.cfg", make_field(&RunConfig::eval_cfg)},
        {"eval.max_samples", make_field(&RunConfig::eval_max_samples)},
        {"eval.seeds", make_field(&RunConfig::eval_seeds)},
    };
    return table;
}

}  // namespace

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = field_table();
    auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("config: unknown key " + key);
    try {
        it->second.set(cfg, value);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("config: bad value for " + key + ": " + value);
    }
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected key = value");
        config_set(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [key, field] : field_table()) os << key << " = " << field.get(cfg) << "\n";
    return os.str();
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    return out;
}

ModelConfig make_model_config(const RunConfig& cfg, Arm arm) {
    ModelConfig m;
    m.image_size = cfg.data_size;
    m.channels = parse_int_list(cfg.model_channels);
    m.res_units = cfg.model_res_units;
    m.dense_l = cfg.model_dense_l;
    m.clamp_lo = cfg.model_clamp_lo;
    m.clamp_hi = cfg.model_clamp_hi;
    m.n_tok = cfg.model_n_tok;
    m.d_sem = cfg.model_d_sem;
    m.d_attn = cfg.model_d_attn;
    m.sem_channels = parse_int_list(cfg.model_sem_channels);
    m.time_dim = cfg.model_time_dim;
    m.arm = arm;
    m.validate();
    return m;
}

TrainConfig make_train_config(const RunConfig& cfg) {
    TrainConfig t;
    t.lr = cfg.train_lr;
    t.batch_size = cfg.train_batch;
    t.steps = cfg.train_steps;
    t.seed = cfg.train_seed;
    t.cond_drop_prob = cfg.train_cond_drop;
    t.log_every = cfg.train_log_every;
    if (cfg.train_freeze == "staged") {
        t.freeze = staged_regime_freeze();
    } else if (!cfg.train_freeze.empty()) {
        std::istringstream is(cfg.train_freeze);
        std::string tok;
        while (std::getline(is, tok, ','))
            if (!trim(tok).empty()) t.freeze.insert(trim(tok));
    }
    t.validate();
    return t;
}

DataCfg make_data_config(const RunConfig& cfg) {
    DataCfg d;
    d.image_size = cfg.data_size;
    d.box_min = cfg.data_box_min;
    d.box_max = cfg.data_box_max;
    d.validate();
    return d;
}

NoiseSchedule make_schedule(const RunConfig& cfg) {
    return make_linear_schedule(cfg.schedule_t, cfg.schedule_beta_start, cfg.schedule_beta_end);
}

SampleOpts make_sample_opts(const RunConfig& cfg) {
    SampleOpts s;
    s.steps = cfg.sample_steps;
    s.cfg_scale = cfg.sample_cfg;
    return s;
}

}  // namespace dgad
