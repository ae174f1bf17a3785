#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dgad/dense_attn.hpp"
#include "dgad/encoder.hpp"
#include "dgad/schedule.hpp"

namespace dgad {

struct BoxI {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    int area() const { return width() * height(); }
};

enum class Arm { Full, NoDenseCa, DenseCaBothStages, RandomInputWeights, NoLayoutConcat };

Arm arm_from_string(const std::string& name);
std::string arm_to_string(Arm arm);

struct ModelConfig {
    int image_size = 64;  // divisible by 4
    int latent_channels = 4;
    std::vector<int> channels = {64, 128, 256};
    int res_units = 2;
    int time_dim = 128;
    int n_tok = 16;
    int d_sem = 64;
    int d_attn = 64;
    std::vector<int> sem_channels = {32, 64, 128};
    int dense_l = 1;
    double clamp_lo = 0.5;
    double clamp_hi = 0.8;
    int ref_res_units = 1;
    Arm arm = Arm::Full;

    int latent_size() const { return image_size / 4; }
    int levels() const { return static_cast<int>(channels.size()); }
    void validate() const;
};

template <typename T>
struct Param {
    std::string name;
    std::string group;
    TensorT<T> value;
    bool trainable = true;  // false while the group is frozen
};

template <typename T>
class ParamStore {
public:
    int add(std::string name, std::string group, TensorT<T> value);
    Param<T>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
    const Param<T>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
    int find(const std::string& name) const;
    std::size_t size() const { return params_.size(); }
    std::set<std::string> group_names() const;
    std::size_t scalar_count() const;

private:
    std::vector<Param<T>> params_;
    std::map<std::string, int> index_;
};

/// Everything the denoiser receives besides the noisy latent and timestep.
template <typename T>
struct ConditioningBundle {
    TensorT<T> m_lat;                 // [B,1,h,w]
    TensorT<T> f_bg;                  // [B,C_lat,h,w]
    SemanticTokens<T> f_obj;          // [B,n_tok,d_sem]
    std::vector<TensorT<T>> f_r;      // per decoder level, deepest first
};

/// Captures the feature entering each semantic cross-attention block, for
/// attention-map rendering.
template <typename T>
struct ForwardTrace {
    std::vector<std::string> block_names;
    std::vector<TensorT<T>> ca_inputs;
};

/// Fixed orthogonal latent projection: space-to-depth by 4 then a 48 -> C_lat
/// basis projection (per-channel block means plus a luminance gradient),
/// scaled by 1/2 so latents land in the sampler's working range. Never
/// trained; encode/decode compose to an orthogonal projection.
class LatentCodec {
public:
    LatentCodec();

    template <typename T>
    TensorT<T> encode(const TensorT<T>& image) const;  // [B,3,H,W] -> [B,4,H/4,W/4]

    template <typename T>
    TensorT<T> decode(const TensorT<T>& latent) const;  // inverse direction

    const Tensor64& basis() const { return basis_; }  // [4,48], orthonormal rows

private:
    Tensor64 basis_;
};

template <typename T>
class DgadModelT {
public:
    DgadModelT(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const LatentCodec& codec() const { return codec_; }

    // architecture introspection
    int dense_blocks_in_decoder() const;
    int dense_blocks_in_encoder() const;

    TensorT<T> latent_encode(const TensorT<T>& image) const;
    TensorT<T> latent_decode(const TensorT<T>& latent) const;

    SemanticTokens<T> semantic_encode(const TensorT<T>& i_obj) const;
    std::vector<TensorT<T>> reference_forward(const TensorT<T>& i_obj) const;

    TensorT<T> predict_noise(const TensorT<T>& f_tgt_t, int t, const ConditioningBundle<T>& cond,
                             ForwardTrace<T>* trace = nullptr) const;

    /// Full reverse-sampled composition of one object into one background.
    /// Outside-box pixels are taken from the background at image resolution.
    TensorT<T> compose(const TensorT<T>& i_obj, const TensorT<T>& i_bg, const BoxI& box,
                       const NoiseSchedule& schedule, int steps, double cfg_scale,
                       std::uint64_t seed, SamplerMode mode = SamplerMode::Ddim) const;

    /// Latent box mask: image-resolution box rasterized, bicubic-downsampled,
    /// clamped to [0,1].
    TensorT<T> latent_mask(const BoxI& box, int batch = 1) const;

    // ---- graph building (training path) ----
    struct Bound {
        std::vector<typename Graph<T>::Ref> refs;  // one per param, index-aligned
    };
    Bound bind(Graph<T>& g, bool needs_grad) const;

    typename Graph<T>::Ref semantic_encode_g(Graph<T>& g, const Bound& b,
                                             typename Graph<T>::Ref i_obj) const;
    std::vector<typename Graph<T>::Ref> reference_forward_g(Graph<T>& g, const Bound& b,
                                                            typename Graph<T>::Ref i_obj) const;
    /// tokens/f_r may come from the in-graph encoders (training) or from
    /// no-grad leaves (inference).
    typename Graph<T>::Ref unet_forward_g(Graph<T>& g, const Bound& b, typename Graph<T>::Ref x_in,
                                          typename Graph<T>::Ref temb, typename Graph<T>::Ref tokens,
                                          const std::vector<typename Graph<T>::Ref>& f_r,
                                          ForwardTrace<T>* trace = nullptr) const;

    /// Sinusoidal embedding for per-sample timesteps, [B, time_dim].
    TensorT<T> time_embedding(const std::vector<int>& t) const;

    /// Channel count of each decoder level's working features, deepest first.
    std::vector<int> decoder_feature_channels() const;
    std::vector<int> decoder_feature_sizes() const;

private:
    struct ResUnitIdx {
        int conv1_w, conv1_b, conv2_w, conv2_b;
        int shortcut_w = -1, shortcut_b = -1;
        int time_w = -1, time_b = -1;
    };
    struct CrossAttnIdx {
        int w_q, w_k, w_v, w_out;
    };
    struct StackIdx {
        int c1_w, c1_b;
        std::vector<std::pair<int, int>> c3;
    };
    struct DenseIdx {
        StackIdx q, k, v;
        int fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct BlockIdx {
        std::vector<ResUnitIdx> rus;
        CrossAttnIdx ca;
        std::optional<DenseIdx> dense;
        int level = 0;
        std::string name;
    };

    ModelConfig cfg_;
    ParamStore<T> store_;
    LatentCodec codec_;

    int input_conv_w_ = -1, input_conv_b_ = -1;
    int time_mlp_w_ = -1, time_mlp_b_ = -1;
    std::vector<BlockIdx> enc_blocks_;
    BlockIdx bottleneck_;
    std::vector<BlockIdx> dec_blocks_;  // deepest first
    std::vector<std::pair<int, int>> down_convs_;
    std::vector<std::pair<int, int>> up_convs_;
    int out_conv_w_ = -1, out_conv_b_ = -1;

    // semantic encoder
    std::array<int, 3> sem_conv_w_{}, sem_conv_b_{};
    int sem_key_w_ = -1, sem_key_b_ = -1, sem_val_w_ = -1, sem_val_b_ = -1, sem_queries_ = -1;

    // reference network
    int ref_in_w_ = -1, ref_in_b_ = -1;
    std::vector<ResUnitIdx> ref_enc_rus_;
    std::vector<std::pair<int, int>> ref_down_;
    std::vector<ResUnitIdx> ref_dec_rus_;
    std::vector<std::pair<int, int>> ref_up_;

    void build_params(std::uint64_t seed);
    ResUnitIdx add_res_unit(const std::string& name, const std::string& group, int cin, int cout,
                            bool with_time, std::uint64_t seed);
    CrossAttnIdx add_cross_attn(const std::string& name, int c, std::uint64_t seed);
    DenseIdx add_dense(const std::string& name, int c, std::uint64_t seed);

    typename Graph<T>::Ref res_unit_g(Graph<T>& g, const Bound& b, typename Graph<T>::Ref x,
                                      typename Graph<T>::Ref temb, const ResUnitIdx& ru) const;
    typename Graph<T>::Ref block_g(Graph<T>& g, const Bound& b, typename Graph<T>::Ref x,
                                   typename Graph<T>::Ref temb, typename Graph<T>::Ref tokens,
                                   typename Graph<T>::Ref f_r_ref, const BlockIdx& blk,
                                   ForwardTrace<T>* trace) const;
    CrossAttnRefs<T> ca_refs(const Bound& b, const CrossAttnIdx& idx) const;
    DenseAttnRefs<T> dense_refs(const Bound& b, const DenseIdx& idx) const;
};

using DgadModel32 = DgadModelT<float>;
using DgadModel64 = DgadModelT<double>;

/// Box rasterized at image resolution: 1 inside, 0 outside.
template <typename T>
TensorT<T> box_mask_image(const BoxI& box, int image_size);

}  // namespace dgad
