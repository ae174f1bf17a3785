#include "dgad/gradient_suite.hpp"

#include <algorithm>

#include "dgad/model.hpp"

namespace dgad {

namespace {

Tensor64 rnd(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
    SplitMix64 rng(seed);
    auto t = randn<double>(std::move(shape), rng);
    for (auto& v : t.data) v *= scale;
    return t;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 8;  // 2x2 latent
    cfg.channels = {6, 8};
    cfg.res_units = 1;
    cfg.time_dim = 8;
    cfg.n_tok = 3;
    cfg.d_sem = 6;
    cfg.d_attn = 6;
    cfg.sem_channels = {3, 4, 6};
    cfg.dense_l = 1;
    return cfg;
}

GradCheckReport check_semantic_ca(double tol, double eps) {
    const int c = 8, d_sem = 8, d = 8;
    Tensor64 f_b = rnd({1, c, 2, 2}, 101, 0.7);
    Tensor64 tokens = rnd({1, 3, d_sem}, 102, 0.7);
    std::vector<NamedTensor64> params = {
        {"w_q", rnd({c, d}, 103, 0.4)},
        {"w_k", rnd({d_sem, d}, 104, 0.4)},
        {"w_v", rnd({d_sem, d}, 105, 0.4)},
        {"w_out", rnd({d, c}, 106, 0.4)},
    };
    auto build = [f_b, tokens](Graph64& g, const std::vector<Graph64::Ref>& p) {
        CrossAttnRefs<double> refs{p[0], p[1], p[2], p[3]};
        auto out = semantic_cross_attention_g(g, g.leaf(f_b), g.leaf(tokens), refs);
        return g.mean_sq_diff(out, g.leaf(Tensor64(g.value(out).shape)));
    };
    return grad_check("semantic_cross_attention", build, params, eps, tol);
}

GradCheckReport check_dense_ca(double tol, double eps) {
    const int c = 8, hidden = 4;
    Tensor64 f_b = rnd({1, c, 2, 2}, 111, 0.7);
    Tensor64 f_r = rnd({1, c, 2, 2}, 112, 0.7);
    std::vector<NamedTensor64> params = {
        {"q.c1.w", rnd({c, c, 1, 1}, 113, 0.3)}, {"q.c1.b", rnd({c}, 114, 0.1)},
        {"q.c3.w", rnd({c, c, 3, 3}, 115, 0.15)}, {"q.c3.b", rnd({c}, 116, 0.1)},
        {"k.c1.w", rnd({c, c, 1, 1}, 117, 0.3)}, {"k.c1.b", rnd({c}, 118, 0.1)},
        {"k.c3.w", rnd({c, c, 3, 3}, 119, 0.15)}, {"k.c3.b", rnd({c}, 120, 0.1)},
        {"v.c1.w", rnd({c, c, 1, 1}, 121, 0.3)}, {"v.c1.b", rnd({c}, 122, 0.1)},
        {"v.c3.w", rnd({c, c, 3, 3}, 123, 0.15)}, {"v.c3.b", rnd({c}, 124, 0.1)},
        {"fc1.w", rnd({c, hidden}, 125, 0.4)},   {"fc1.b", rnd({hidden}, 126, 0.1)},
        {"fc2.w", rnd({hidden, 1}, 127, 0.4)},   {"fc2.b", Tensor64({1}, {-0.85})},
    };
    auto build = [f_b, f_r](Graph64& g, const std::vector<Graph64::Ref>& p) {
        DenseAttnRefs<double> refs;
        refs.q = {p[0], p[1], {{p[2], p[3]}}};
        refs.k = {p[4], p[5], {{p[6], p[7]}}};
        refs.v = {p[8], p[9], {{p[10], p[11]}}};
        refs.fc1_w = p[12];
        refs.fc1_b = p[13];
        refs.fc2_w = p[14];
        refs.fc2_b = p[15];
        auto out = dense_attention_g(g, g.leaf(f_b), g.leaf(f_r), refs);
        return g.mean_sq_diff(out, g.leaf(Tensor64(g.value(out).shape)));
    };
    return grad_check("dense_cross_attention", build, params, eps, tol);
}

GradCheckReport check_unet_convs(double tol, double eps) {
    // one residual conv unit with channel change plus a strided down conv
    Tensor64 x = rnd({1, 6, 4, 4}, 131, 0.7);
    std::vector<NamedTensor64> params = {
        {"conv1.w", rnd({8, 6, 3, 3}, 132, 0.2)}, {"conv1.b", rnd({8}, 133, 0.1)},
        {"conv2.w", rnd({8, 8, 3, 3}, 134, 0.2)}, {"conv2.b", rnd({8}, 135, 0.1)},
        {"shortcut.w", rnd({8, 6, 1, 1}, 136, 0.4)}, {"shortcut.b", rnd({8}, 137, 0.1)},
        {"down.w", rnd({12, 8, 3, 3}, 138, 0.2)}, {"down.b", rnd({12}, 139, 0.1)},
        {"up.w", rnd({8, 12, 3, 3}, 140, 0.2)}, {"up.b", rnd({8}, 141, 0.1)},
    };
    auto build = [x](Graph64& g, const std::vector<Graph64::Ref>& p) {
        auto xin = g.leaf(x);
        auto a = g.relu(g.conv2d(xin, p[0], p[1], 1, 1));
        auto delta = g.conv2d(a, p[2], p[3], 1, 1);
        auto h = g.add(g.conv2d(xin, p[4], p[5], 1, 0), delta);
        auto down = g.conv2d(h, p[6], p[7], 2, 1);
        auto up = g.conv2d(g.upsample_nearest2x(down), p[8], p[9], 1, 1);
        return g.mean_sq_diff(up, g.leaf(Tensor64(g.value(up).shape)));
    };
    return grad_check("unet_conv_units", build, params, eps, tol);
}

GradCheckReport check_time_embedding(double tol, double eps) {
    ModelConfig cfg = tiny_config();
    DgadModel64 model(cfg, 7);
    Tensor64 temb = model.time_embedding({3, 11});
    const int td = cfg.time_dim;
    Tensor64 feat = rnd({2, 8, 2, 2}, 151, 0.7);
    std::vector<NamedTensor64> params = {
        {"time.mlp.w", rnd({td, td}, 152, 0.3)},
        {"time.mlp.b", rnd({td}, 153, 0.1)},
        {"proj.w", rnd({td, 8}, 154, 0.3)},
        {"proj.b", rnd({8}, 155, 0.1)},
    };
    auto build = [temb, feat](Graph64& g, const std::vector<Graph64::Ref>& p) {
        auto h = g.relu(g.linear(g.leaf(temb), p[0], p[1]));
        auto proj = g.linear(h, p[2], p[3]);
        auto out = g.add_time(g.leaf(feat), proj);
        return g.mean_sq_diff(out, g.leaf(Tensor64(g.value(out).shape)));
    };
    return grad_check("time_embedding", build, params, eps, tol);
}

// Checks a subset of a full model's parameters through a builder that binds
// the remaining parameters as constants.
template <typename BuildBody>
GradCheckReport check_model_subset(const DgadModel64& model, const std::string& name,
                                   const std::string& group_filter, double tol, double eps,
                                   BuildBody body) {
    std::vector<NamedTensor64> params;
    std::vector<int> param_indices;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[static_cast<int>(i)];
        if (!group_filter.empty() && p.group != group_filter) continue;
        params.push_back({p.name, p.value});
        param_indices.push_back(static_cast<int>(i));
    }
    auto build = [&model, param_indices, body](Graph64& g, const std::vector<Graph64::Ref>& p) {
        DgadModel64::Bound bound;
        bound.refs.resize(model.params().size());
        std::vector<bool> overridden(model.params().size(), false);
        for (std::size_t k = 0; k < param_indices.size(); ++k) {
            bound.refs[static_cast<std::size_t>(param_indices[k])] = p[k];
            overridden[static_cast<std::size_t>(param_indices[k])] = true;
        }
        for (std::size_t i = 0; i < model.params().size(); ++i)
            if (!overridden[i]) bound.refs[i] = g.leaf(model.params()[static_cast<int>(i)].value, false);
        return body(g, bound);
    };
    return grad_check(name, build, params, eps, tol);
}

GradCheckReport check_semantic_encoder(const DgadModel64& model, double tol, double eps) {
    Tensor64 i_obj = rnd({1, 3, 8, 8}, 161, 0.5);
    return check_model_subset(model, "semantic_encoder", "semantic_encoder", tol, eps,
                              [&model, i_obj](Graph64& g, const DgadModel64::Bound& b) {
                                  auto tokens = model.semantic_encode_g(g, b, g.leaf(i_obj));
                                  return g.mean_sq_diff(tokens, g.leaf(Tensor64(g.value(tokens).shape)));
                              });
}

GradCheckReport check_reference_net(const DgadModel64& model, double tol, double eps) {
    Tensor64 i_obj = rnd({1, 3, 8, 8}, 171, 0.5);
    return check_model_subset(model, "reference_net", "ref_net", tol, eps,
                              [&model, i_obj](Graph64& g, const DgadModel64::Bound& b) {
                                  auto feats = model.reference_forward_g(g, b, g.leaf(i_obj));
                                  auto loss = g.mean_sq_diff(
                                      feats[0], g.leaf(Tensor64(g.value(feats[0]).shape)));
                                  for (std::size_t i = 1; i < feats.size(); ++i)
                                      loss = g.add(loss, g.mean_sq_diff(
                                                             feats[i], g.leaf(Tensor64(g.value(feats[i]).shape))));
                                  return loss;
                              });
}

GradCheckReport check_full_model(const DgadModel64& model, double tol, double eps) {
    const int s = model.config().latent_size();
    Tensor64 i_obj = rnd({1, 3, 8, 8}, 181, 0.5);
    Tensor64 f_tgt_t = rnd({1, 4, s, s}, 182, 0.7);
    Tensor64 f_bg = rnd({1, 4, s, s}, 183, 0.7);
    SplitMix64 mrng(184);
    Tensor64 m_lat = rand_uniform<double>({1, 1, s, s}, mrng, 0.0, 1.0);
    Tensor64 eps_target = rnd({1, 4, s, s}, 185, 0.7);
    Tensor64 temb = model.time_embedding({5});

    return check_model_subset(
        model, "full_denoiser", "", tol, eps,
        [&model, i_obj, f_tgt_t, f_bg, m_lat, eps_target, temb](Graph64& g,
                                                                const DgadModel64::Bound& b) {
            auto tokens = model.semantic_encode_g(g, b, g.leaf(i_obj));
            auto f_r = model.reference_forward_g(g, b, g.leaf(i_obj));
            Tensor64 x_in = assemble_input(m_lat, f_bg, f_tgt_t);
            auto pred = model.unet_forward_g(g, b, g.leaf(x_in), g.leaf(temb), tokens, f_r, nullptr);
            return g.mean_sq_diff(pred, g.leaf(eps_target));
        });
}

}  // namespace

GradientSuiteResult gradient_suite(double tol, double eps) {
    GradientSuiteResult result;
    result.reports.push_back(check_semantic_ca(tol, eps));
    result.reports.push_back(check_dense_ca(tol, eps));
    result.reports.push_back(check_unet_convs(tol, eps));
    result.reports.push_back(check_time_embedding(tol, eps));

    DgadModel64 model(tiny_config(), 7);
    result.reports.push_back(check_semantic_encoder(model, tol, eps));
    result.reports.push_back(check_reference_net(model, tol, eps));
    result.reports.push_back(check_full_model(model, tol, eps));

    result.passed = true;
    for (const auto& r : result.reports) {
        result.passed = result.passed && r.passed;
        result.max_rel_error = std::max(result.max_rel_error, r.max_rel_error);
    }
    return result;
}

}  // namespace dgad
