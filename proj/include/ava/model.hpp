#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ava/errors.hpp"
#include "ava/tensor.hpp"

namespace ava {

// ---- configuration ----

/// One temporal branch: a stack of dilated causal convolutions with residual
/// connections, followed by a linear map to output_dim.
struct BranchConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> tcn_channels{64, 64};
    std::size_t kernel_size = 3;
    std::vector<std::size_t> dilations{1, 2};
    double dropout_rate = 0.1;
    std::size_t output_dim = 64;

    void validate() const {
        if (tcn_channels.size() != dilations.size())
            throw ValidationError("BranchConfig: tcn_channels and dilations must have equal length");
        if (input_dim == 0 || output_dim == 0 || kernel_size == 0)
            throw ValidationError("BranchConfig: dimensions must be positive");
    }
};

/// Stand-in spatial encoder: three conv/relu/maxpool stages then global
/// average pooling and a linear map to d_v. The three named stages keep the
/// staged-unfreezing protocol intact.
struct BackboneConfig {
    std::vector<std::size_t> stage_channels{4, 8, 16};
    std::size_t d_v = 64;
};

struct ModelConfig {
    BackboneConfig backbone;
    BranchConfig visual_tcn;
    BranchConfig audio_tcn;
    BranchConfig text_tcn;
    std::size_t d_k = 32;
    std::size_t heads = 1;
    bool separate_target_heads = false;
    std::uint64_t seed = 0;

    /// Fills the derived input widths and checks consistency.
    void finalize(std::size_t audio_dim, std::size_t text_dim) {
        visual_tcn.input_dim = backbone.d_v;
        audio_tcn.input_dim = audio_dim;
        text_tcn.input_dim = text_dim;
        validate();
    }
    void validate() const {
        visual_tcn.validate();
        audio_tcn.validate();
        text_tcn.validate();
        if (heads == 0 || d_k % heads != 0)
            throw ValidationError("ModelConfig: heads must divide d_k");
        if (backbone.stage_channels.size() != 3)
            throw ValidationError("ModelConfig: backbone needs exactly 3 stages");
    }
};

// ---- attention ----

/// Per-branch projections and their row-wise (temporal) concatenations.
struct AttentionBundle {
    std::vector<Tensor> q_branch, k_branch, v_branch;  // each T x d_k
    Tensor q, k, v;                                    // 3T x d_k
    std::size_t d_k = 32;
};

namespace detail {
/// ones[n x 1] * (ones[1 x n] * V): every row becomes the column sums of V.
inline Tensor colsum_broadcast(const Tensor& v) {
    std::size_t n = v.dim(0);
    Tensor ones_row({1, n}, std::vector<double>(n, 1.0));
    Tensor ones_col({n, 1}, std::vector<double>(n, 1.0));
    return matmul(ones_col, matmul(ones_row, v));
}
}  // namespace detail

/// (softmax(Q K^T / sqrt(d_k)) + 1) V. The all-ones term makes every output
/// row carry the column sums of V on top of standard attention.
inline Tensor coattention_single(const Tensor& q, const Tensor& k, const Tensor& v,
                                 std::size_t d_k) {
    if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0) || q.dim(0) != k.dim(0))
        throw ShapeMismatch("coattention: Q/K/V dimensions disagree");
    Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d_k)));
    Tensor attn = softmax_rows(scores);
    return add(matmul(attn, v), detail::colsum_broadcast(v));
}

/// Multi-head variant: heads split the d_k columns evenly, each scored with
/// its own width, outputs re-concatenated feature-wise.
inline Tensor coattention(const AttentionBundle& b, std::size_t heads = 1) {
    if (heads <= 1) return coattention_single(b.q, b.k, b.v, b.d_k);
    std::size_t dh = b.d_k / heads;
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h)
        outs.push_back(coattention_single(slice_cols(b.q, h * dh, dh), slice_cols(b.k, h * dh, dh),
                                          slice_cols(b.v, h * dh, dh), dh));
    return concat(outs, 1);
}

/// Per-frame valence/arousal predictions.
struct ModelOutput {
    Tensor valence;  // T x 1
    Tensor arousal;  // T x 1

    std::vector<double> valence_values() const { return valence.data(); }
    std::vector<double> arousal_values() const { return arousal.data(); }
};

// ---- the network ----

class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        rng_.seed(cfg_.seed);
        build();
        freeze_initial();
    }

    const ModelConfig& config() const { return cfg_; }

    /// Named parameters in registration order.
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

    std::vector<std::pair<std::string, Tensor>> trainable_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (const auto& [name, t] : params_)
            if (t.requires_grad()) out.push_back({name, t});
        return out;
    }

    /// Backbone stages are frozen at construction; everything else trains.
    void freeze_initial() {
        for (auto& [name, t] : params_)
            t.set_requires_grad(name.rfind("backbone.stage", 0) != 0);
    }

    /// Marks every parameter under the given prefix trainable.
    void unfreeze_group(const std::string& prefix) {
        bool any = false;
        for (auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) {
                t.set_requires_grad(true);
                any = true;
            }
        if (!any) throw ValidationError("unfreeze_group: no parameters match '" + prefix + "'");
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    /// Spatial encoding of a window of frames: [T x 3 x H x W] -> [T x d_v].
    Tensor visual_backbone_forward(const Tensor& frames) const {
        if (frames.rank() != 4 || frames.dim(1) != 3)
            throw ShapeMismatch("visual_backbone_forward: expected [T x 3 x H x W]");
        Tensor x = frames;
        for (int s = 1; s <= 3; ++s) {
            x = maxpool2(relu(conv2d(x, param("backbone.stage" + std::to_string(s) + ".w"))));
        }
        Tensor pooled = global_avg_pool(x);  // T x C3
        return affine(pooled, param("backbone.proj.w"), param("backbone.proj.b"));
    }

    /// Temporal encoding: [T x d_in] -> [T x d_out], causal receptive field.
    Tensor tcn_forward(const Tensor& seq, const std::string& branch, const BranchConfig& cfg,
                       bool train, std::mt19937_64* dropout_rng) const {
        if (seq.rank() != 2 || seq.dim(1) != cfg.input_dim)
            throw ShapeMismatch("tcn_forward: input width mismatch in branch " + branch);
        Tensor x = transpose(seq);  // C x T
        for (std::size_t l = 0; l < cfg.tcn_channels.size(); ++l) {
            std::string pfx = branch + ".tcn" + std::to_string(l);
            Tensor y = relu(add_colvec(conv1d_causal(x, param(pfx + ".w"), cfg.dilations[l]),
                                       param(pfx + ".b")));
            if (train && cfg.dropout_rate > 0.0 && dropout_rng) {
                auto& rng = *dropout_rng;
                y = dropout(y, cfg.dropout_rate, [&rng] {
                    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                });
            }
            Tensor res = x.dim(0) == y.dim(0) ? x : conv1d_causal(x, param(pfx + ".res.w"), 1);
            x = add(y, res);
        }
        return affine(transpose(x), param(branch + ".out.w"), param(branch + ".out.b"));
    }

    /// Three independent linear maps to width d_k.
    AttentionBundle branch_encode_qkv(const Tensor& visual_enc, const Tensor& audio_enc,
                                      const Tensor& text_enc) const {
        AttentionBundle b;
        b.d_k = cfg_.d_k;
        const char* branches[3] = {"visual", "audio", "text"};
        const Tensor* encs[3] = {&visual_enc, &audio_enc, &text_enc};
        for (int i = 0; i < 3; ++i) {
            std::string pfx = std::string("attn.") + branches[i];
            b.q_branch.push_back(affine(*encs[i], param(pfx + ".q.w"), param(pfx + ".q.b")));
            b.k_branch.push_back(affine(*encs[i], param(pfx + ".k.w"), param(pfx + ".k.b")));
            b.v_branch.push_back(affine(*encs[i], param(pfx + ".v.w"), param(pfx + ".v.b")));
        }
        b.q = concat(b.q_branch, 0);
        b.k = concat(b.k_branch, 0);
        b.v = concat(b.v_branch, 0);
        return b;
    }

    /// Normalized attention feature regrouped to T rows, concatenated with the
    /// visual temporal encoding, then the FC regressor.
    ModelOutput fusion_head(const Tensor& att, const Tensor& visual_enc) const {
        std::size_t t_len = visual_enc.dim(0);
        if (att.dim(0) != 3 * t_len)
            throw ShapeMismatch("fusion_head: attention rows must be 3T");
        Tensor normed = layer_norm(att, param("fusion.ln.gain"), param("fusion.ln.bias"));
        std::vector<Tensor> blocks;
        for (int i = 0; i < 3; ++i) blocks.push_back(slice_rows(normed, i * t_len, t_len));
        Tensor fused = concat({concat(blocks, 1), visual_enc}, 1);  // T x (3*d_k + d_out)
        ModelOutput out;
        if (cfg_.separate_target_heads) {
            out.valence = affine(fused, param("head.v.w"), param("head.v.b"));
            out.arousal = affine(fused, param("head.a.w"), param("head.a.b"));
        } else {
            Tensor joint = affine(fused, param("head.w"), param("head.b"));
            out.valence = slice_cols(joint, 0, 1);
            out.arousal = slice_cols(joint, 1, 1);
        }
        return out;
    }

    /// Full forward pass. All modalities must share the frame count T.
    ModelOutput forward(const Tensor& visual_frames, const Tensor& audio, const Tensor& text,
                        bool train = false, std::mt19937_64* dropout_rng = nullptr) const {
        std::size_t t_len = visual_frames.dim(0);
        if (audio.dim(0) != t_len || text.dim(0) != t_len)
            throw LengthMismatch("model forward: modality lengths differ");
        Tensor spatial = visual_backbone_forward(visual_frames);
        Tensor visual_enc = tcn_forward(spatial, "visual", cfg_.visual_tcn, train, dropout_rng);
        Tensor audio_enc = tcn_forward(audio, "audio", cfg_.audio_tcn, train, dropout_rng);
        Tensor text_enc = tcn_forward(text, "text", cfg_.text_tcn, train, dropout_rng);
        AttentionBundle bundle = branch_encode_qkv(visual_enc, audio_enc, text_enc);
        Tensor att = coattention(bundle, cfg_.heads);
        return fusion_head(att, visual_enc);
    }

    // ---- state ----

    std::vector<std::pair<std::string, std::vector<double>>> state() const {
        std::vector<std::pair<std::string, std::vector<double>>> out;
        for (const auto& [name, t] : params_) out.push_back({name, t.data()});
        return out;
    }

    void load_state(const std::vector<std::pair<std::string, std::vector<double>>>& st) {
        if (st.size() != params_.size()) throw CheckpointMismatch("state entry count differs");
        for (std::size_t i = 0; i < st.size(); ++i) {
            auto& [name, t] = params_[i];
            if (st[i].first != name)
                throw CheckpointMismatch("parameter name mismatch: " + st[i].first + " vs " + name);
            if (st[i].second.size() != t.size())
                throw CheckpointMismatch("parameter size mismatch for " + name);
            t.data() = st[i].second;
        }
    }

    Tensor& param(const std::string& name) {
        for (auto& [n, t] : params_)
            if (n == name) return t;
        throw Error("unknown parameter: " + name);
    }
    const Tensor& param(const std::string& name) const {
        return const_cast<Model*>(this)->param(name);
    }

private:
    void build() {
        const auto& bc = cfg_.backbone;
        std::size_t in_ch = 3;
        for (int s = 0; s < 3; ++s) {
            add_param("backbone.stage" + std::to_string(s + 1) + ".w",
                      {bc.stage_channels[s], in_ch, 3, 3});
            in_ch = bc.stage_channels[s];
        }
        add_param("backbone.proj.w", {in_ch, bc.d_v});
        add_param("backbone.proj.b", {bc.d_v}, true);

        build_branch("visual", cfg_.visual_tcn);
        build_branch("audio", cfg_.audio_tcn);
        build_branch("text", cfg_.text_tcn);

        for (const char* br : {"visual", "audio", "text"}) {
            std::size_t d = 0;
            if (std::string(br) == "visual") d = cfg_.visual_tcn.output_dim;
            if (std::string(br) == "audio") d = cfg_.audio_tcn.output_dim;
            if (std::string(br) == "text") d = cfg_.text_tcn.output_dim;
            for (const char* proj : {"q", "k", "v"}) {
                add_param("attn." + std::string(br) + "." + proj + ".w", {d, cfg_.d_k});
                add_param("attn." + std::string(br) + "." + proj + ".b", {cfg_.d_k}, true);
            }
        }

        add_param("fusion.ln.gain", {cfg_.d_k}, false, 1.0);
        add_param("fusion.ln.bias", {cfg_.d_k}, true);

        std::size_t fused_dim = 3 * cfg_.d_k + cfg_.visual_tcn.output_dim;
        if (cfg_.separate_target_heads) {
            add_param("head.v.w", {fused_dim, 1});
            add_param("head.v.b", {1}, true);
            add_param("head.a.w", {fused_dim, 1});
            add_param("head.a.b", {1}, true);
        } else {
            add_param("head.w", {fused_dim, 2});
            add_param("head.b", {2}, true);
        }
    }

    void build_branch(const std::string& name, const BranchConfig& cfg) {
        cfg.validate();
        std::size_t in_ch = cfg.input_dim;
        for (std::size_t l = 0; l < cfg.tcn_channels.size(); ++l) {
            std::string pfx = name + ".tcn" + std::to_string(l);
            add_param(pfx + ".w", {cfg.tcn_channels[l], in_ch, cfg.kernel_size});
            add_param(pfx + ".b", {cfg.tcn_channels[l]}, true);
            if (in_ch != cfg.tcn_channels[l]) add_param(pfx + ".res.w", {cfg.tcn_channels[l], in_ch, 1});
            in_ch = cfg.tcn_channels[l];
        }
        add_param(name + ".out.w", {in_ch, cfg.output_dim});
        add_param(name + ".out.b", {cfg.output_dim}, true);
    }

    void add_param(const std::string& name, std::vector<std::size_t> shape, bool zero_init = false,
                   double fill = 0.0) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        std::vector<double> data(n, fill);
        if (!zero_init && fill == 0.0) {
            // Glorot-style uniform: fan_in = everything but the leading dim.
            std::size_t fan_in = n / shape[0];
            std::size_t fan_out = shape[0];
            double lim = std::sqrt(6.0 / double(fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-lim, lim);
            for (double& v : data) v = dist(rng_);
        }
        params_.emplace_back(name, Tensor(std::move(shape), std::move(data), true));
    }

    ModelConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace ava
