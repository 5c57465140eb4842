#pragma once

#include <vector>

#include "aifn/layers.hpp"
#include "aifn/tensor.hpp"

namespace aifn {

// The four encoded streams of one thread, in the fixed order used everywhere:
// post-word, post-emotion, comment-word, comment-emotion.
template <typename T>
struct PerChannel {
    T post_word;
    T post_emotion;
    T comment_word;
    T comment_emotion;
};

// Pooled post/comment summaries, each a [1 x 4h] row vector.
struct PooledPair {
    Tensor post;
    Tensor comment;
};

// Per-channel masked max over positions, then word/emotion concatenation per
// side. A channel with no unmasked position raises a domain error.
PooledPair pool_and_concat(Tape& tape, const PerChannel<Tensor>& encoded,
                           const PerChannel<const std::vector<std::uint8_t>*>& masks);

// Gate weights over the pooled width (4h) plus the four projections that turn
// the combined features into channel-width (2h) interaction vectors.
struct GainParams {
    Tensor w_f1, w_f2, b_f;   // conflict gate activation
    Tensor w_h1, w_h2, b_h;   // conflict feature mix
    Tensor w_r1, w_r2, b_r;   // refine gate activation
    Tensor w_rp, w_rc, b_rr;  // refine feature mix
    PerChannel<Tensor> w_t;   // [4h x 2h]
    PerChannel<Tensor> b_t;   // [2h]
};

GainParams make_gain(ParamRegistry& reg, const std::string& prefix, std::size_t pooled_width,
                     std::size_t channel_width);

struct GateOut {
    Tensor mu;        // [1 x 4h], strictly inside (0,1)
    Tensor features;  // [1 x 4h], inside (-1,1)
};

// mu = sigmoid(p W1 + c W2 + b); features = tanh((p . mu) Wh1 + (c . (1-mu)) Wh2 + bh).
// The gate multiplies element-wise first, then the weight matrix applies.
GateOut conflicting_gate(Tape& tape, const Tensor& post, const Tensor& comment,
                         const GainParams& params);

// Same shape of computation, but both branches share the one gate mu.
GateOut refining_gate(Tape& tape, const Tensor& post, const Tensor& comment,
                      const GainParams& params);

// S = refined + (1 - mu_refine) . conflicting.
Tensor adaptive_combine(Tape& tape, const Tensor& refined, const Tensor& conflicting,
                        const Tensor& mu_refine);

// tanh(s W + b), flattened to a rank-1 channel-width vector.
Tensor interaction_vector(Tape& tape, const Tensor& s, const Tensor& w, const Tensor& b);

// How an interaction vector meets the attention output inside a channel.
// multiply is the trained model's path; add and concat_after exist for the
// fusion-comparison study (concat widens, so it applies once after the last
// block rather than inside each one).
enum class FusionMode { multiply, add, concat_after };

struct SfsnBlock {
    AttentionParams attention;
    FFNParams ffn;
};

struct SfsnChannelParams {
    std::vector<SfsnBlock> blocks;
};

SfsnChannelParams make_sfsn_channel(ParamRegistry& reg, const std::string& prefix,
                                    std::size_t width, std::size_t heads,
                                    std::size_t block_count);

struct SfsnResult {
    Tensor pooled;                    // [2h], or [4h] in concat_after mode
    std::vector<std::size_t> argmax;  // winning position per pooled dimension
};

struct DropoutCtx {
    double rate = 0.0;
    Mode mode = Mode::infer;
    Rng* rng = nullptr;
};

// Attention blocks with the interaction vector fused in, then a masked max
// over positions. A null interaction skips the fusion step entirely, which is
// bit-identical to fusing with an all-ones vector in multiply mode.
SfsnResult sfsn_channel(Tape& tape, Tensor states, const Tensor* interaction,
                        const SfsnChannelParams& params,
                        const std::vector<std::uint8_t>& mask,
                        FusionMode fusion = FusionMode::multiply,
                        const DropoutCtx& drop = {}, bool attention_residual = false);

struct IntegratedFeatures {
    Tensor post;      // [4h]
    Tensor comment;   // [4h]
    Tensor combined;  // [8h]
};

// post = pw ⊕ pe, comment = cw ⊕ ce, combined = post ⊕ comment.
IntegratedFeatures integrate_channels(Tape& tape, const Tensor& post_word,
                                      const Tensor& post_emotion, const Tensor& comment_word,
                                      const Tensor& comment_emotion);

}  // namespace aifn
