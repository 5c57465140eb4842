#include "aifn/fusion.hpp"

#include <cmath>

namespace aifn {

PooledPair pool_and_concat(Tape& tape, const PerChannel<Tensor>& encoded,
                           const PerChannel<const std::vector<std::uint8_t>*>& masks) {
    const Tensor pw = tape.max_pool(encoded.post_word, masks.post_word).values;
    const Tensor pe = tape.max_pool(encoded.post_emotion, masks.post_emotion).values;
    const Tensor cw = tape.max_pool(encoded.comment_word, masks.comment_word).values;
    const Tensor ce = tape.max_pool(encoded.comment_emotion, masks.comment_emotion).values;
    const Tensor post = tape.concat({pw, pe}, 0);
    const Tensor comment = tape.concat({cw, ce}, 0);
    return PooledPair{tape.reshape(post, {1, post.numel()}),
                      tape.reshape(comment, {1, comment.numel()})};
}

GainParams make_gain(ParamRegistry& reg, const std::string& prefix, std::size_t pooled_width,
                     std::size_t channel_width) {
    const double gate_bound = 1.0 / std::sqrt(static_cast<double>(pooled_width));
    auto square = [&](const std::string& name) {
        return reg.uniform(prefix + "." + name, {pooled_width, pooled_width}, gate_bound);
    };
    auto gate_bias = [&](const std::string& name) {
        return reg.uniform(prefix + "." + name, {pooled_width}, gate_bound);
    };
    GainParams p;
    p.w_f1 = square("conflict.w_post");
    p.w_f2 = square("conflict.w_comment");
    p.b_f = gate_bias("conflict.bias");
    p.w_h1 = square("conflict.mix_post");
    p.w_h2 = square("conflict.mix_comment");
    p.b_h = gate_bias("conflict.mix_bias");
    p.w_r1 = square("refine.w_post");
    p.w_r2 = square("refine.w_comment");
    p.b_r = gate_bias("refine.bias");
    p.w_rp = square("refine.mix_post");
    p.w_rc = square("refine.mix_comment");
    p.b_rr = gate_bias("refine.mix_bias");
    auto proj = [&](const std::string& name) {
        return reg.uniform(prefix + ".t." + name + ".w", {pooled_width, channel_width},
                           gate_bound);
    };
    auto proj_bias = [&](const std::string& name) {
        return reg.uniform(prefix + ".t." + name + ".b", {channel_width}, gate_bound);
    };
    p.w_t = {proj("post_word"), proj("post_emotion"), proj("comment_word"),
             proj("comment_emotion")};
    p.b_t = {proj_bias("post_word"), proj_bias("post_emotion"), proj_bias("comment_word"),
             proj_bias("comment_emotion")};
    return p;
}

GateOut conflicting_gate(Tape& tape, const Tensor& post, const Tensor& comment,
                         const GainParams& params) {
    const Tensor mu = tape.sigmoid(tape.add(
        tape.add(tape.matmul(post, params.w_f1), tape.matmul(comment, params.w_f2)),
        params.b_f));
    const Tensor ones = Tensor::full({1, mu.shape()[1]}, 1.0);
    const Tensor post_part = tape.matmul(tape.mul(post, mu), params.w_h1);
    const Tensor comment_part = tape.matmul(tape.mul(comment, tape.sub(ones, mu)), params.w_h2);
    const Tensor features = tape.tanh(tape.add(tape.add(post_part, comment_part), params.b_h));
    return GateOut{mu, features};
}

GateOut refining_gate(Tape& tape, const Tensor& post, const Tensor& comment,
                      const GainParams& params) {
    const Tensor mu = tape.sigmoid(tape.add(
        tape.add(tape.matmul(post, params.w_r1), tape.matmul(comment, params.w_r2)),
        params.b_r));
    const Tensor post_part = tape.matmul(tape.mul(post, mu), params.w_rp);
    const Tensor comment_part = tape.matmul(tape.mul(comment, mu), params.w_rc);
    const Tensor features = tape.tanh(tape.add(tape.add(post_part, comment_part), params.b_rr));
    return GateOut{mu, features};
}

Tensor adaptive_combine(Tape& tape, const Tensor& refined, const Tensor& conflicting,
                        const Tensor& mu_refine) {
    const Tensor ones = Tensor::full({1, mu_refine.shape()[1]}, 1.0);
    return tape.add(refined, tape.mul(tape.sub(ones, mu_refine), conflicting));
}

Tensor interaction_vector(Tape& tape, const Tensor& s, const Tensor& w, const Tensor& b) {
    const Tensor projected = tape.tanh(tape.add(tape.matmul(s, w), b));
    return tape.reshape(projected, {projected.shape()[1]});
}

SfsnChannelParams make_sfsn_channel(ParamRegistry& reg, const std::string& prefix,
                                    std::size_t width, std::size_t heads,
                                    std::size_t block_count) {
    if (block_count == 0) {
        throw ConfigError("sfsn block count must be at least 1");
    }
    SfsnChannelParams p;
    for (std::size_t b = 0; b < block_count; ++b) {
        const std::string tag = prefix + ".b" + std::to_string(b);
        SfsnBlock block;
        block.attention = make_attention(reg, tag + ".attn", width, heads);
        block.ffn = make_ffn(reg, tag + ".ffn", width);
        p.blocks.push_back(std::move(block));
    }
    return p;
}

SfsnResult sfsn_channel(Tape& tape, Tensor states, const Tensor* interaction,
                        const SfsnChannelParams& params,
                        const std::vector<std::uint8_t>& mask, FusionMode fusion,
                        const DropoutCtx& drop, bool attention_residual) {
    for (const SfsnBlock& block : params.blocks) {
        Tensor attended =
            multi_head_attention(tape, states, block.attention, mask, attention_residual);
        if (interaction && fusion == FusionMode::multiply) {
            attended = tape.mul(attended, *interaction);
        } else if (interaction && fusion == FusionMode::add) {
            attended = tape.add(attended, *interaction);
        }
        states = feed_forward(tape, attended, block.ffn);
        if (drop.rng) {
            states = dropout(tape, states, drop.rate, drop.mode, *drop.rng);
        }
    }
    if (interaction && fusion == FusionMode::concat_after) {
        // Repeat the interaction vector as a row per position, then widen.
        const Tensor row = tape.reshape(*interaction, {1, interaction->numel()});
        const Tensor tiled =
            tape.gather_rows(row, std::vector<std::size_t>(states.shape()[0], 0));
        states = tape.concat({states, tiled}, 1);
    }
    auto pooled = tape.max_pool(states, &mask);
    return SfsnResult{pooled.values, std::move(pooled.argmax)};
}

IntegratedFeatures integrate_channels(Tape& tape, const Tensor& post_word,
                                      const Tensor& post_emotion, const Tensor& comment_word,
                                      const Tensor& comment_emotion) {
    IntegratedFeatures out;
    out.post = tape.concat({post_word, post_emotion}, 0);
    out.comment = tape.concat({comment_word, comment_emotion}, 0);
    out.combined = tape.concat({out.post, out.comment}, 0);
    return out;
}

}  // namespace aifn
