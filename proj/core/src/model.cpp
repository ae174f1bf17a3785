#include "dgad/model.hpp"

#include <algorithm>
#include <cmath>

namespace dgad {

Arm arm_from_string(const std::string& name) {
    if (name == "full") return Arm::Full;
    if (name == "no_dense_ca") return Arm::NoDenseCa;
    if (name == "dense_ca_both_stages") return Arm::DenseCaBothStages;
    if (name == "random_input_weights") return Arm::RandomInputWeights;
    if (name == "no_layout_concat") return Arm::NoLayoutConcat;
    throw std::invalid_argument("unknown arm: " + name);
}

std::string arm_to_string(Arm arm) {
    switch (arm) {
        case Arm::Full: return "full";
        case Arm::NoDenseCa: return "no_dense_ca";
        case Arm::DenseCaBothStages: return "dense_ca_both_stages";
        case Arm::RandomInputWeights: return "random_input_weights";
        case Arm::NoLayoutConcat: return "no_layout_concat";
    }
    return "full";
}

void ModelConfig::validate() const {
    if (image_size < 8 || image_size % 4 != 0)
        throw std::invalid_argument("model: image_size must be a multiple of 4 and >= 8");
    if (latent_channels != 4) throw std::invalid_argument("model: latent_channels is fixed to 4");
    if (channels.size() < 2) throw std::invalid_argument("model: need at least 2 levels");
    const int max_down = latent_size() >> (levels() - 1);
    if (max_down < 1) throw std::invalid_argument("model: too many levels for this latent size");
    if (res_units < 1 || dense_l < 0 || n_tok < 1 || d_sem < 1 || d_attn < 1)
        throw std::invalid_argument("model: bad block configuration");
    if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("model: clamp interval requires lo < hi");
    if (sem_channels.size() != 3) throw std::invalid_argument("model: semantic encoder uses 3 conv stages");
}

template <typename T>
int ParamStore<T>::add(std::string name, std::string group, TensorT<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    const int idx = static_cast<int>(params_.size());
    index_[name] = idx;
    params_.push_back(Param<T>{std::move(name), std::move(group), std::move(value), true});
    return idx;
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

template <typename T>
std::set<std::string> ParamStore<T>::group_names() const {
    std::set<std::string> out;
    for (const auto& p : params_) out.insert(p.group);
    return out;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

// ---------------------------------------------------------------------------
// latent codec
// ---------------------------------------------------------------------------

LatentCodec::LatentCodec() : basis_({4, 48}) {
    // rows 0..2: per-channel block means
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 16; ++p) basis_.data[static_cast<std::size_t>(c) * 48 + c * 16 + p] = 0.25;
    // row 3: horizontal luminance gradient within the block
    const double luma[3] = {0.299, 0.587, 0.114};
    double luma_norm = 0;
    for (double l : luma) luma_norm += l * l;
    luma_norm = std::sqrt(luma_norm);
    const double gx[4] = {-3.0, -1.0, 1.0, 3.0};
    const double gx_norm = std::sqrt(9.0 + 1.0 + 1.0 + 9.0);
    for (int c = 0; c < 3; ++c)
        for (int by = 0; by < 4; ++by)
            for (int bx = 0; bx < 4; ++bx)
                basis_.data[3 * 48 + static_cast<std::size_t>(c) * 16 + by * 4 + bx] =
                    (luma[c] / luma_norm) * 0.5 * (gx[bx] / gx_norm);
}

template <typename T>
TensorT<T> LatentCodec::encode(const TensorT<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != 3)
        throw std::invalid_argument("latent_encode: expects [B,3,H,W]");
    const int b = image.dim(0), h = image.dim(2), w = image.dim(3);
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument("latent_encode: H and W must be divisible by 4");
    const int oh = h / 4, ow = w / 4;
    TensorT<T> out({b, 4, oh, ow});
    for (int n = 0; n < b; ++n)
        for (int r = 0; r < 4; ++r)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = 0;
                    for (int c = 0; c < 3; ++c)
                        for (int by = 0; by < 4; ++by)
                            for (int bx = 0; bx < 4; ++bx)
                                acc += basis_.data[static_cast<std::size_t>(r) * 48 + c * 16 + by * 4 + bx] *
                                       static_cast<double>(
                                           image.data[((static_cast<std::size_t>(n) * 3 + c) * h + 4 * y + by) * w +
                                                      4 * x + bx]);
                    out.data[((static_cast<std::size_t>(n) * 4 + r) * oh + y) * ow + x] =
                        static_cast<T>(0.5 * acc);
                }
    return out;
}

template <typename T>
TensorT<T> LatentCodec::decode(const TensorT<T>& latent) const {
    if (latent.ndim() != 4 || latent.dim(1) != 4)
        throw std::invalid_argument("latent_decode: expects [B,4,h,w]");
    const int b = latent.dim(0), oh = latent.dim(2), ow = latent.dim(3);
    const int h = oh * 4, w = ow * 4;
    TensorT<T> out({b, 3, h, w});
    for (int n = 0; n < b; ++n)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int c = 0; c < 3; ++c)
                    for (int by = 0; by < 4; ++by)
                        for (int bx = 0; bx < 4; ++bx) {
                            double acc = 0;
                            for (int r = 0; r < 4; ++r)
                                acc += basis_.data[static_cast<std::size_t>(r) * 48 + c * 16 + by * 4 + bx] *
                                       static_cast<double>(
                                           latent.data[((static_cast<std::size_t>(n) * 4 + r) * oh + y) * ow + x]);
                            out.data[((static_cast<std::size_t>(n) * 3 + c) * h + 4 * y + by) * w + 4 * x + bx] =
                                static_cast<T>(2.0 * acc);
                        }
    return out;
}

template Tensor32 LatentCodec::encode<float>(const Tensor32&) const;
template Tensor64 LatentCodec::encode<double>(const Tensor64&) const;
template Tensor32 LatentCodec::decode<float>(const Tensor32&) const;
template Tensor64 LatentCodec::decode<double>(const Tensor64&) const;

template <typename T>
TensorT<T> box_mask_image(const BoxI& box, int image_size) {
    TensorT<T> m({1, 1, image_size, image_size});
    for (int y = std::max(0, box.y0); y < std::min(image_size, box.y1); ++y)
        for (int x = std::max(0, box.x0); x < std::min(image_size, box.x1); ++x)
            m.data[static_cast<std::size_t>(y) * image_size + x] = T(1);
    return m;
}

template Tensor32 box_mask_image<float>(const BoxI&, int);
template Tensor64 box_mask_image<double>(const BoxI&, int);

// ---------------------------------------------------------------------------
// parameter construction
// ---------------------------------------------------------------------------

namespace {

enum class Init { Zero, HeConv, Linear, UnitNormal };

template <typename T>
TensorT<T> init_tensor(const std::vector<int>& shape, Init kind, std::uint64_t stream) {
    TensorT<T> t(shape);
    if (kind == Init::Zero) return t;
    SplitMix64 rng(stream);
    double std_dev = 1.0;
    if (kind == Init::HeConv) {
        const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
        std_dev = std::sqrt(2.0 / fan_in);
    } else if (kind == Init::Linear) {
        std_dev = std::sqrt(1.0 / static_cast<double>(shape[0]));
    }
    for (auto& v : t.data) v = static_cast<T>(std_dev * rng.normal());
    return t;
}

}  // namespace

template <typename T>
DgadModelT<T>::DgadModelT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build_params(seed);
}

template <typename T>
typename DgadModelT<T>::ResUnitIdx DgadModelT<T>::add_res_unit(const std::string& name,
                                                               const std::string& group, int cin,
                                                               int cout, bool with_time,
                                                               std::uint64_t seed) {
    ResUnitIdx ru;
    ru.conv1_w = store_.add(name + ".conv1.w", group,
                            init_tensor<T>({cout, cin, 3, 3}, Init::HeConv, seed ^ fnv1a(name + ".conv1.w")));
    ru.conv1_b = store_.add(name + ".conv1.b", group, TensorT<T>({cout}));
    // second conv starts at zero so a fresh unit reduces to its shortcut
    ru.conv2_w = store_.add(name + ".conv2.w", group, TensorT<T>({cout, cout, 3, 3}));
    ru.conv2_b = store_.add(name + ".conv2.b", group, TensorT<T>({cout}));
    if (cin != cout) {
        ru.shortcut_w = store_.add(name + ".shortcut.w", group,
                                   init_tensor<T>({cout, cin, 1, 1}, Init::HeConv, seed ^ fnv1a(name + ".shortcut.w")));
        ru.shortcut_b = store_.add(name + ".shortcut.b", group, TensorT<T>({cout}));
    }
    if (with_time) {
        ru.time_w = store_.add(name + ".time.w", "time_embed",
                               init_tensor<T>({cfg_.time_dim, cout}, Init::Linear, seed ^ fnv1a(name + ".time.w")));
        ru.time_b = store_.add(name + ".time.b", "time_embed", TensorT<T>({cout}));
    }
    return ru;
}

template <typename T>
typename DgadModelT<T>::CrossAttnIdx DgadModelT<T>::add_cross_attn(const std::string& name, int c,
                                                                   std::uint64_t seed) {
    CrossAttnIdx ca;
    ca.w_q = store_.add(name + ".w_q", "semantic_ca",
                        init_tensor<T>({c, cfg_.d_attn}, Init::Linear, seed ^ fnv1a(name + ".w_q")));
    ca.w_k = store_.add(name + ".w_k", "semantic_ca",
                        init_tensor<T>({cfg_.d_sem, cfg_.d_attn}, Init::Linear, seed ^ fnv1a(name + ".w_k")));
    ca.w_v = store_.add(name + ".w_v", "semantic_ca",
                        init_tensor<T>({cfg_.d_sem, cfg_.d_attn}, Init::Linear, seed ^ fnv1a(name + ".w_v")));
    // zero output projection keeps a fresh block an identity on its stream
    ca.w_out = store_.add(name + ".w_out", "semantic_ca", TensorT<T>({cfg_.d_attn, c}));
    return ca;
}

template <typename T>
typename DgadModelT<T>::DenseIdx DgadModelT<T>::add_dense(const std::string& name, int c,
                                                          std::uint64_t seed) {
    DenseIdx d;
    auto stack = [&](const std::string& sname) {
        StackIdx s;
        s.c1_w = store_.add(sname + ".c1.w", "dense_ca",
                            init_tensor<T>({c, c, 1, 1}, Init::HeConv, seed ^ fnv1a(sname + ".c1.w")));
        s.c1_b = store_.add(sname + ".c1.b", "dense_ca", TensorT<T>({c}));
        for (int l = 0; l < cfg_.dense_l; ++l) {
            const std::string ln = sname + ".c3_" + std::to_string(l);
            s.c3.push_back({store_.add(ln + ".w", "dense_ca",
                                       init_tensor<T>({c, c, 3, 3}, Init::HeConv, seed ^ fnv1a(ln + ".w"))),
                            store_.add(ln + ".b", "dense_ca", TensorT<T>({c}))});
        }
        return s;
    };
    d.q = stack(name + ".q");
    d.k = stack(name + ".k");
    d.v = stack(name + ".v");
    const int hidden = std::max(4, c / 2);
    d.fc1_w = store_.add(name + ".fc1.w", "dense_ca",
                         init_tensor<T>({c, hidden}, Init::Linear, seed ^ fnv1a(name + ".fc1.w")));
    d.fc1_b = store_.add(name + ".fc1.b", "dense_ca", TensorT<T>({hidden}));
    d.fc2_w = store_.add(name + ".fc2.w", "dense_ca",
                         init_tensor<T>({hidden, 1}, Init::Linear, seed ^ fnv1a(name + ".fc2.w")));
    // keeps beta inside the clamp interval at start, so both Eq. 6 pathways
    // carry gradient from the first step
    d.fc2_b = store_.add(name + ".fc2.b", "dense_ca", TensorT<T>({1}, {static_cast<T>(-0.85)}));
    return d;
}

template <typename T>
void DgadModelT<T>::build_params(std::uint64_t seed) {
    const int n = cfg_.levels();
    const int c_lat = cfg_.latent_channels;

    // Input layer: an original C_lat-channel conv expanded over the layout
    // channels [M | f_bg | f_tgt_t] by weight replication. The original
    // kernel carries a passthrough component (center tap reads one latent
    // channel) standing in for a pretrained input layer; replication
    // preserves that structure, random extra channels do not.
    {
        TensorT<T> orig = init_tensor<T>({cfg_.channels[0], c_lat, 3, 3}, Init::HeConv,
                                         seed ^ fnv1a("input_conv.orig"));
        for (int oc = 0; oc < cfg_.channels[0]; ++oc) {
            const std::size_t center =
                ((static_cast<std::size_t>(oc) * c_lat + oc % c_lat) * 3 + 1) * 3 + 1;
            orig.data[center] += T(0.5);
        }
        TensorT<T> bias({cfg_.channels[0]});
        if (cfg_.arm == Arm::NoLayoutConcat) {
            input_conv_w_ = store_.add("input_conv.w", "input_conv", orig);
        } else {
            const int cin_new = 1 + 2 * c_lat;
            TensorT<T> kernel = expand_input_layer(orig, bias, cin_new, cycling_mapping(c_lat, cin_new));
            if (cfg_.arm == Arm::RandomInputWeights) {
                TensorT<T> fresh = init_tensor<T>({cfg_.channels[0], cin_new - c_lat, 3, 3}, Init::HeConv,
                                                  seed ^ fnv1a("input_conv.extra"));
                const std::size_t kk = 9;
                for (int oc = 0; oc < cfg_.channels[0]; ++oc)
                    for (int ic = c_lat; ic < cin_new; ++ic)
                        std::copy_n(fresh.data.data() +
                                        (static_cast<std::size_t>(oc) * (cin_new - c_lat) + ic - c_lat) * kk,
                                    kk,
                                    kernel.data.data() + (static_cast<std::size_t>(oc) * cin_new + ic) * kk);
            }
            input_conv_w_ = store_.add("input_conv.w", "input_conv", kernel);
        }
        input_conv_b_ = store_.add("input_conv.b", "input_conv", bias);
    }

    time_mlp_w_ = store_.add("time.mlp.w", "time_embed",
                             init_tensor<T>({cfg_.time_dim, cfg_.time_dim}, Init::Linear, seed ^ fnv1a("time.mlp.w")));
    time_mlp_b_ = store_.add("time.mlp.b", "time_embed", TensorT<T>({cfg_.time_dim}));

    const bool both_stages = cfg_.arm == Arm::DenseCaBothStages;

    for (int lvl = 0; lvl < n - 1; ++lvl) {
        BlockIdx blk;
        blk.level = lvl;
        blk.name = "unet.enc" + std::to_string(lvl);
        const int c = cfg_.channels[static_cast<std::size_t>(lvl)];
        for (int r = 0; r < cfg_.res_units; ++r)
            blk.rus.push_back(add_res_unit(blk.name + ".ru" + std::to_string(r), "backbone", c, c, true, seed));
        blk.ca = add_cross_attn(blk.name + ".ca", c, seed);
        if (both_stages) blk.dense = add_dense(blk.name + ".dense", c, seed);
        enc_blocks_.push_back(std::move(blk));
        down_convs_.push_back(
            {store_.add("unet.down" + std::to_string(lvl) + ".w", "backbone",
                        init_tensor<T>({cfg_.channels[static_cast<std::size_t>(lvl + 1)], c, 3, 3}, Init::HeConv,
                                       seed ^ fnv1a("unet.down" + std::to_string(lvl) + ".w"))),
             store_.add("unet.down" + std::to_string(lvl) + ".b", "backbone",
                        TensorT<T>({cfg_.channels[static_cast<std::size_t>(lvl + 1)]}))});
    }

    {
        bottleneck_.level = n - 1;
        bottleneck_.name = "unet.mid";
        const int c = cfg_.channels[static_cast<std::size_t>(n - 1)];
        for (int r = 0; r < cfg_.res_units; ++r)
            bottleneck_.rus.push_back(add_res_unit("unet.mid.ru" + std::to_string(r), "backbone", c, c, true, seed));
        bottleneck_.ca = add_cross_attn("unet.mid.ca", c, seed);
    }

    for (int j = 0; j < n; ++j) {
        const int lvl = n - 1 - j;
        const int c = cfg_.channels[static_cast<std::size_t>(lvl)];
        BlockIdx blk;
        blk.level = lvl;
        blk.name = "unet.dec" + std::to_string(lvl);
        const int cin = j == 0 ? c : 2 * c;  // skip concat below the top of the decoder
        for (int r = 0; r < cfg_.res_units; ++r)
            blk.rus.push_back(add_res_unit(blk.name + ".ru" + std::to_string(r), "backbone",
                                           r == 0 ? cin : c, c, true, seed));
        blk.ca = add_cross_attn(blk.name + ".ca", c, seed);
        blk.dense = add_dense(blk.name + ".dense", c, seed);
        dec_blocks_.push_back(std::move(blk));
        if (j < n - 1) {
            const int cnext = cfg_.channels[static_cast<std::size_t>(lvl - 1)];
            up_convs_.push_back(
                {store_.add("unet.up" + std::to_string(lvl) + ".w", "backbone",
                            init_tensor<T>({cnext, c, 3, 3}, Init::HeConv,
                                           seed ^ fnv1a("unet.up" + std::to_string(lvl) + ".w"))),
                 store_.add("unet.up" + std::to_string(lvl) + ".b", "backbone", TensorT<T>({cnext}))});
        }
    }

    // small-gain prediction head: near-zero initial output while keeping a
    // gradient path open for regimes that freeze the backbone
    {
        TensorT<T> head = init_tensor<T>({c_lat, cfg_.channels[0], 3, 3}, Init::HeConv,
                                         seed ^ fnv1a("unet.out.w"));
        for (auto& v : head.data) v *= T(0.1);
        out_conv_w_ = store_.add("unet.out.w", "backbone", head);
        out_conv_b_ = store_.add("unet.out.b", "backbone", TensorT<T>({c_lat}));
    }

    // semantic encoder
    {
        int prev = 3;
        for (int i = 0; i < 3; ++i) {
            const int c = cfg_.sem_channels[static_cast<std::size_t>(i)];
            const std::string cn = "sem.conv" + std::to_string(i);
            sem_conv_w_[static_cast<std::size_t>(i)] =
                store_.add(cn + ".w", "semantic_encoder",
                           init_tensor<T>({c, prev, 3, 3}, Init::HeConv, seed ^ fnv1a(cn + ".w")));
            sem_conv_b_[static_cast<std::size_t>(i)] = store_.add(cn + ".b", "semantic_encoder", TensorT<T>({c}));
            prev = c;
        }
        sem_key_w_ = store_.add("sem.key.w", "semantic_encoder",
                                init_tensor<T>({prev, cfg_.d_sem}, Init::Linear, seed ^ fnv1a("sem.key.w")));
        sem_key_b_ = store_.add("sem.key.b", "semantic_encoder", TensorT<T>({cfg_.d_sem}));
        sem_val_w_ = store_.add("sem.val.w", "semantic_encoder",
                                init_tensor<T>({prev, cfg_.d_sem}, Init::Linear, seed ^ fnv1a("sem.val.w")));
        sem_val_b_ = store_.add("sem.val.b", "semantic_encoder", TensorT<T>({cfg_.d_sem}));
        sem_queries_ = store_.add("sem.queries", "semantic_encoder",
                                  init_tensor<T>({cfg_.n_tok, cfg_.d_sem}, Init::UnitNormal,
                                                 seed ^ fnv1a("sem.queries")));
    }

    // reference network
    {
        ref_in_w_ = store_.add("ref.in.w", "ref_net",
                               init_tensor<T>({cfg_.channels[0], c_lat, 3, 3}, Init::HeConv, seed ^ fnv1a("ref.in.w")));
        ref_in_b_ = store_.add("ref.in.b", "ref_net", TensorT<T>({cfg_.channels[0]}));
        for (int lvl = 0; lvl < n; ++lvl) {
            const int c = cfg_.channels[static_cast<std::size_t>(lvl)];
            ref_enc_rus_.push_back(add_res_unit("ref.enc" + std::to_string(lvl), "ref_net", c, c, false, seed));
            if (lvl < n - 1)
                ref_down_.push_back(
                    {store_.add("ref.down" + std::to_string(lvl) + ".w", "ref_net",
                                init_tensor<T>({cfg_.channels[static_cast<std::size_t>(lvl + 1)], c, 3, 3},
                                               Init::HeConv, seed ^ fnv1a("ref.down" + std::to_string(lvl) + ".w"))),
                     store_.add("ref.down" + std::to_string(lvl) + ".b", "ref_net",
                                TensorT<T>({cfg_.channels[static_cast<std::size_t>(lvl + 1)]}))});
        }
        for (int j = 0; j < n; ++j) {
            const int lvl = n - 1 - j;
            const int c = cfg_.channels[static_cast<std::size_t>(lvl)];
            ref_dec_rus_.push_back(add_res_unit("ref.dec" + std::to_string(lvl), "ref_net", c, c, false, seed));
            if (j < n - 1) {
                const int cnext = cfg_.channels[static_cast<std::size_t>(lvl - 1)];
                ref_up_.push_back(
                    {store_.add("ref.up" + std::to_string(lvl) + ".w", "ref_net",
                                init_tensor<T>({cnext, c, 3, 3}, Init::HeConv,
                                               seed ^ fnv1a("ref.up" + std::to_string(lvl) + ".w"))),
                     store_.add("ref.up" + std::to_string(lvl) + ".b", "ref_net", TensorT<T>({cnext}))});
            }
        }
    }
}

// ---------------------------------------------------------------------------
// forward graph
// ---------------------------------------------------------------------------

template <typename T>
typename DgadModelT<T>::Bound DgadModelT<T>::bind(Graph<T>& g, bool needs_grad) const {
    Bound b;
    b.refs.reserve(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i) {
        const auto& p = store_[static_cast<int>(i)];
        b.refs.push_back(g.leaf(p.value, needs_grad && p.trainable));
    }
    return b;
}

template <typename T>
CrossAttnRefs<T> DgadModelT<T>::ca_refs(const Bound& b, const CrossAttnIdx& idx) const {
    return CrossAttnRefs<T>{b.refs[static_cast<std::size_t>(idx.w_q)], b.refs[static_cast<std::size_t>(idx.w_k)],
                            b.refs[static_cast<std::size_t>(idx.w_v)], b.refs[static_cast<std::size_t>(idx.w_out)]};
}

template <typename T>
DenseAttnRefs<T> DgadModelT<T>::dense_refs(const Bound& b, const DenseIdx& idx) const {
    DenseAttnRefs<T> r;
    auto stack = [&](const StackIdx& s) {
        ProjStackRefs<T> out;
        out.c1_w = b.refs[static_cast<std::size_t>(s.c1_w)];
        out.c1_b = b.refs[static_cast<std::size_t>(s.c1_b)];
        for (const auto& [w, bias] : s.c3)
            out.c3.push_back({b.refs[static_cast<std::size_t>(w)], b.refs[static_cast<std::size_t>(bias)]});
        return out;
    };
    r.q = stack(idx.q);
    r.k = stack(idx.k);
    r.v = stack(idx.v);
    r.fc1_w = b.refs[static_cast<std::size_t>(idx.fc1_w)];
    r.fc1_b = b.refs[static_cast<std::size_t>(idx.fc1_b)];
    r.fc2_w = b.refs[static_cast<std::size_t>(idx.fc2_w)];
    r.fc2_b = b.refs[static_cast<std::size_t>(idx.fc2_b)];
    r.clamp_lo = cfg_.clamp_lo;
    r.clamp_hi = cfg_.clamp_hi;
    return r;
}

template <typename T>
typename Graph<T>::Ref DgadModelT<T>::res_unit_g(Graph<T>& g, const Bound& b, typename Graph<T>::Ref x,
                                                 typename Graph<T>::Ref temb, const ResUnitIdx& ru) const {
    auto a = g.conv2d(x, b.refs[static_cast<std::size_t>(ru.conv1_w)], b.refs[static_cast<std::size_t>(ru.conv1_b)], 1, 1);
    if (ru.time_w >= 0) {
        auto tproj = g.linear(temb, b.refs[static_cast<std::size_t>(ru.time_w)], b.refs[static_cast<std::size_t>(ru.time_b)]);
        a = g.add_time(a, tproj);
    }
    a = g.relu(a);
    auto delta = g.conv2d(a, b.refs[static_cast<std::size_t>(ru.conv2_w)], b.refs[static_cast<std::size_t>(ru.conv2_b)], 1, 1);
    auto shortcut = ru.shortcut_w >= 0
                        ? g.conv2d(x, b.refs[static_cast<std::size_t>(ru.shortcut_w)],
                                   b.refs[static_cast<std::size_t>(ru.shortcut_b)], 1, 0)
                        : x;
    return g.add(shortcut, delta);
}

template <typename T>
typename Graph<T>::Ref DgadModelT<T>::block_g(Graph<T>& g, const Bound& b, typename Graph<T>::Ref x,
                                              typename Graph<T>::Ref temb, typename Graph<T>::Ref tokens,
                                              typename Graph<T>::Ref f_r_ref, const BlockIdx& blk,
                                              ForwardTrace<T>* trace) const {
    auto h = x;
    for (const auto& ru : blk.rus) h = res_unit_g(g, b, h, temb, ru);
    if (trace) {
        trace->block_names.push_back(blk.name);
        trace->ca_inputs.push_back(g.value(h));
    }
    h = semantic_cross_attention_g(g, h, tokens, ca_refs(b, blk.ca));
    if (blk.dense && f_r_ref >= 0) {
        auto refs = dense_refs(b, *blk.dense);
        auto d = cfg_.arm == Arm::NoDenseCa ? dense_attention_ungated_g(g, h, f_r_ref, refs)
                                            : dense_attention_g(g, h, f_r_ref, refs);
        h = g.add(h, d);
    }
    return h;
}

template <typename T>
typename Graph<T>::Ref DgadModelT<T>::unet_forward_g(Graph<T>& g, const Bound& b,
                                                     typename Graph<T>::Ref x_in,
                                                     typename Graph<T>::Ref temb,
                                                     typename Graph<T>::Ref tokens,
                                                     const std::vector<typename Graph<T>::Ref>& f_r,
                                                     ForwardTrace<T>* trace) const {
    const int n = cfg_.levels();
    if (static_cast<int>(f_r.size()) != n)
        throw std::invalid_argument("unet_forward: need one reference feature per decoder level");

    auto temb_h = g.relu(g.linear(temb, b.refs[static_cast<std::size_t>(time_mlp_w_)],
                                  b.refs[static_cast<std::size_t>(time_mlp_b_)]));
    auto h = g.conv2d(x_in, b.refs[static_cast<std::size_t>(input_conv_w_)],
                      b.refs[static_cast<std::size_t>(input_conv_b_)], 1, 1);

    std::vector<typename Graph<T>::Ref> skips;
    for (int lvl = 0; lvl < n - 1; ++lvl) {
        const auto& blk = enc_blocks_[static_cast<std::size_t>(lvl)];
        // encoder-stage dense attention (ablation arm) reuses the matching-
        // level reference feature
        const auto f_ref = blk.dense ? f_r[static_cast<std::size_t>(n - 1 - lvl)] : typename Graph<T>::Ref(-1);
        h = block_g(g, b, h, temb_h, tokens, f_ref, blk, trace);
        skips.push_back(h);
        h = g.conv2d(h, b.refs[static_cast<std::size_t>(down_convs_[static_cast<std::size_t>(lvl)].first)],
                     b.refs[static_cast<std::size_t>(down_convs_[static_cast<std::size_t>(lvl)].second)], 2, 1);
    }

    h = block_g(g, b, h, temb_h, tokens, -1, bottleneck_, trace);

    for (int j = 0; j < n; ++j) {
        h = block_g(g, b, h, temb_h, tokens, f_r[static_cast<std::size_t>(j)],
                    dec_blocks_[static_cast<std::size_t>(j)], trace);
        if (j < n - 1) {
            h = g.upsample_nearest2x(h);
            h = g.conv2d(h, b.refs[static_cast<std::size_t>(up_convs_[static_cast<std::size_t>(j)].first)],
                         b.refs[static_cast<std::size_t>(up_convs_[static_cast<std::size_t>(j)].second)], 1, 1);
            h = g.concat_ch(h, skips[static_cast<std::size_t>(n - 2 - j)]);
        }
    }

    return g.conv2d(h, b.refs[static_cast<std::size_t>(out_conv_w_)],
                    b.refs[static_cast<std::size_t>(out_conv_b_)], 1, 1);
}

template <typename T>
typename Graph<T>::Ref DgadModelT<T>::semantic_encode_g(Graph<T>& g, const Bound& b,
                                                        typename Graph<T>::Ref i_obj) const {
    SemanticEncoderRefs<T> refs;
    for (std::size_t i = 0; i < 3; ++i) {
        refs.conv_w[i] = b.refs[static_cast<std::size_t>(sem_conv_w_[i])];
        refs.conv_b[i] = b.refs[static_cast<std::size_t>(sem_conv_b_[i])];
    }
    refs.key_w = b.refs[static_cast<std::size_t>(sem_key_w_)];
    refs.key_b = b.refs[static_cast<std::size_t>(sem_key_b_)];
    refs.val_w = b.refs[static_cast<std::size_t>(sem_val_w_)];
    refs.val_b = b.refs[static_cast<std::size_t>(sem_val_b_)];
    refs.queries = b.refs[static_cast<std::size_t>(sem_queries_)];
    return dgad::semantic_encode_g(g, i_obj, refs);
}

template <typename T>
std::vector<typename Graph<T>::Ref> DgadModelT<T>::reference_forward_g(Graph<T>& g, const Bound& b,
                                                                       typename Graph<T>::Ref i_obj) const {
    const int n = cfg_.levels();
    auto z = g.leaf(codec_.encode(g.value(i_obj)), false);
    auto h = g.relu(g.conv2d(z, b.refs[static_cast<std::size_t>(ref_in_w_)],
                             b.refs[static_cast<std::size_t>(ref_in_b_)], 1, 1));
    std::vector<typename Graph<T>::Ref> enc_feats;
    for (int lvl = 0; lvl < n; ++lvl) {
        h = res_unit_g(g, b, h, -1, ref_enc_rus_[static_cast<std::size_t>(lvl)]);
        enc_feats.push_back(h);
        if (lvl < n - 1)
            h = g.conv2d(h, b.refs[static_cast<std::size_t>(ref_down_[static_cast<std::size_t>(lvl)].first)],
                         b.refs[static_cast<std::size_t>(ref_down_[static_cast<std::size_t>(lvl)].second)], 2, 1);
    }
    std::vector<typename Graph<T>::Ref> feats;
    auto d = enc_feats.back();
    for (int j = 0; j < n; ++j) {
        d = res_unit_g(g, b, d, -1, ref_dec_rus_[static_cast<std::size_t>(j)]);
        feats.push_back(d);
        if (j < n - 1) {
            d = g.upsample_nearest2x(d);
            d = g.conv2d(d, b.refs[static_cast<std::size_t>(ref_up_[static_cast<std::size_t>(j)].first)],
                         b.refs[static_cast<std::size_t>(ref_up_[static_cast<std::size_t>(j)].second)], 1, 1);
            d = g.add(d, enc_feats[static_cast<std::size_t>(n - 2 - j)]);
        }
    }
    return feats;  // deepest first, aligned with decoder blocks
}

// ---------------------------------------------------------------------------
// public forward wrappers
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> DgadModelT<T>::time_embedding(const std::vector<int>& t) const {
    const int b = static_cast<int>(t.size());
    const int half = cfg_.time_dim / 2;
    TensorT<T> out({b, cfg_.time_dim});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / half);
            const double angle = static_cast<double>(t[static_cast<std::size_t>(i)]) * freq;
            out.data[static_cast<std::size_t>(i) * cfg_.time_dim + j] = static_cast<T>(std::sin(angle));
            out.data[static_cast<std::size_t>(i) * cfg_.time_dim + half + j] = static_cast<T>(std::cos(angle));
        }
    return out;
}

template <typename T>
TensorT<T> DgadModelT<T>::latent_encode(const TensorT<T>& image) const {
    return codec_.encode(image);
}

template <typename T>
TensorT<T> DgadModelT<T>::latent_decode(const TensorT<T>& latent) const {
    return codec_.decode(latent);
}

template <typename T>
SemanticTokens<T> DgadModelT<T>::semantic_encode(const TensorT<T>& i_obj) const {
    Graph<T> g;
    auto b = bind(g, false);
    auto out = semantic_encode_g(g, b, g.leaf(i_obj, false));
    return SemanticTokens<T>{g.value(out)};
}

template <typename T>
std::vector<TensorT<T>> DgadModelT<T>::reference_forward(const TensorT<T>& i_obj) const {
    Graph<T> g;
    auto b = bind(g, false);
    auto feats = reference_forward_g(g, b, g.leaf(i_obj, false));
    std::vector<TensorT<T>> out;
    out.reserve(feats.size());
    for (auto r : feats) out.push_back(g.value(r));
    return out;
}

template <typename T>
TensorT<T> DgadModelT<T>::predict_noise(const TensorT<T>& f_tgt_t, int t,
                                        const ConditioningBundle<T>& cond, ForwardTrace<T>* trace) const {
    const int b = f_tgt_t.ndim() == 4 ? f_tgt_t.dim(0) : 0;
    const int s = cfg_.latent_size();
    if (f_tgt_t.ndim() != 4 || f_tgt_t.dim(1) != cfg_.latent_channels || f_tgt_t.dim(2) != s ||
        f_tgt_t.dim(3) != s)
        throw std::invalid_argument("predict_noise: latent shape mismatch " + shape_str(f_tgt_t.shape));
    if (cond.m_lat.shape != std::vector<int>({b, 1, s, s}) ||
        cond.f_bg.shape != std::vector<int>({b, cfg_.latent_channels, s, s}))
        throw std::invalid_argument("predict_noise: conditioning shape mismatch");
    if (cond.f_obj.tokens.shape != std::vector<int>({b, cfg_.n_tok, cfg_.d_sem}))
        throw std::invalid_argument("predict_noise: token shape mismatch");
    const auto want_ch = decoder_feature_channels();
    const auto want_sz = decoder_feature_sizes();
    if (cond.f_r.size() != want_ch.size())
        throw std::invalid_argument("predict_noise: wrong number of reference features");
    for (std::size_t i = 0; i < want_ch.size(); ++i)
        if (cond.f_r[i].shape !=
            std::vector<int>({b, want_ch[i], want_sz[i], want_sz[i]}))
            throw std::invalid_argument("predict_noise: reference feature shape mismatch at level " +
                                        std::to_string(i));

    TensorT<T> x_in = cfg_.arm == Arm::NoLayoutConcat
                          ? f_tgt_t
                          : assemble_input(cond.m_lat, cond.f_bg, f_tgt_t);

    Graph<T> g;
    auto bound = bind(g, false);
    auto temb = g.leaf(time_embedding(std::vector<int>(static_cast<std::size_t>(b), t)), false);
    auto tokens = g.leaf(cond.f_obj.tokens, false);
    std::vector<typename Graph<T>::Ref> f_r;
    f_r.reserve(cond.f_r.size());
    for (const auto& f : cond.f_r) f_r.push_back(g.leaf(f, false));
    auto out = unet_forward_g(g, bound, g.leaf(x_in, false), temb, tokens, f_r, trace);
    return g.value(out);
}

template <typename T>
TensorT<T> DgadModelT<T>::latent_mask(const BoxI& box, int batch) const {
    const int s = cfg_.latent_size();
    auto img_mask = box_mask_image<T>(box, cfg_.image_size);
    auto lat = clamp(bicubic_downsample(img_mask, s, s), T(0), T(1));
    if (batch == 1) return lat;
    TensorT<T> out({batch, 1, s, s});
    for (int i = 0; i < batch; ++i)
        std::copy_n(lat.data.data(), lat.numel(), out.data.data() + static_cast<std::size_t>(i) * lat.numel());
    return out;
}

template <typename T>
TensorT<T> DgadModelT<T>::compose(const TensorT<T>& i_obj, const TensorT<T>& i_bg, const BoxI& box,
                                  const NoiseSchedule& schedule, int steps, double cfg_scale,
                                  std::uint64_t seed, SamplerMode mode) const {
    if (i_obj.ndim() != 3 || i_bg.ndim() != 3)
        throw std::invalid_argument("compose: expects [3,H,W] images");
    if (steps < 1) throw std::invalid_argument("compose: steps must be >= 1");
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > cfg_.image_size || box.y1 > cfg_.image_size ||
        box.width() <= 0 || box.height() <= 0)
        throw std::invalid_argument("compose: box out of range");

    TensorT<T> obj_b({1, 3, i_obj.dim(1), i_obj.dim(2)});
    std::copy_n(i_obj.data.data(), i_obj.numel(), obj_b.data.data());
    TensorT<T> bg_b({1, 3, i_bg.dim(1), i_bg.dim(2)});
    std::copy_n(i_bg.data.data(), i_bg.numel(), bg_b.data.data());

    ConditioningBundle<T> cond;
    cond.m_lat = latent_mask(box);
    cond.f_bg = codec_.encode(bg_b);
    cond.f_obj = semantic_encode(obj_b);
    cond.f_r = reference_forward(obj_b);

    ConditioningBundle<T> uncond = cond;
    uncond.f_obj.tokens = TensorT<T>(cond.f_obj.tokens.shape);
    for (auto& f : uncond.f_r) f = TensorT<T>(f.shape);

    const int s = cfg_.latent_size();
    SplitMix64 rng(seed);
    TensorT<T> x = dgad::randn<T>({1, cfg_.latent_channels, s, s}, rng);

    const auto taus = sampler_timesteps(schedule.steps, steps);
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const int t_prev = i + 1 < taus.size() ? taus[i + 1] : -1;
        TensorT<T> eps = predict_noise(x, t, cond);
        if (cfg_scale != 1.0) eps = cfg_combine(predict_noise(x, t, uncond), eps, cfg_scale);
        x = sampler_step_between(x, eps, t, t_prev, schedule, mode, rng);
    }

    TensorT<T> decoded = codec_.decode(x);
    TensorT<T> out({3, cfg_.image_size, cfg_.image_size});
    const int sz = cfg_.image_size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < sz; ++y)
            for (int xx = 0; xx < sz; ++xx) {
                const bool inside = xx >= box.x0 && xx < box.x1 && y >= box.y0 && y < box.y1;
                const T v = inside ? decoded.data[(static_cast<std::size_t>(c) * sz + y) * sz + xx]
                                   : i_bg.data[(static_cast<std::size_t>(c) * sz + y) * sz + xx];
                out.data[(static_cast<std::size_t>(c) * sz + y) * sz + xx] =
                    std::min(std::max(v, T(-1)), T(1));
            }
    return out;
}

template <typename T>
int DgadModelT<T>::dense_blocks_in_decoder() const {
    int n = 0;
    for (const auto& b : dec_blocks_)
        if (b.dense) ++n;
    return n;
}

template <typename T>
int DgadModelT<T>::dense_blocks_in_encoder() const {
    int n = bottleneck_.dense ? 1 : 0;
    for (const auto& b : enc_blocks_)
        if (b.dense) ++n;
    return n;
}

template <typename T>
std::vector<int> DgadModelT<T>::decoder_feature_channels() const {
    std::vector<int> out;
    for (int j = cfg_.levels() - 1; j >= 0; --j) out.push_back(cfg_.channels[static_cast<std::size_t>(j)]);
    return out;
}

template <typename T>
std::vector<int> DgadModelT<T>::decoder_feature_sizes() const {
    std::vector<int> out;
    for (int j = cfg_.levels() - 1; j >= 0; --j) out.push_back(cfg_.latent_size() >> j);
    return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class DgadModelT<float>;
template class DgadModelT<double>;

}  // namespace dgad
