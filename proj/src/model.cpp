#include "aifn/model.hpp"

#include <algorithm>
#include <cmath>

namespace aifn {

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{
        Variant::full,
        Variant::no_gain_concat,
        Variant::no_conflicting,
        Variant::no_refining,
        Variant::no_adaptive,
        Variant::sfsn_minus_post_word,
        Variant::sfsn_minus_post_emotion,
        Variant::sfsn_minus_comment_word,
        Variant::sfsn_minus_comment_emotion,
        Variant::no_sfsn,
        Variant::no_sfsn_no_gain,
    };
    return v;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_gain_concat: return "no_gain_concat";
        case Variant::no_conflicting: return "no_conflicting";
        case Variant::no_refining: return "no_refining";
        case Variant::no_adaptive: return "no_adaptive";
        case Variant::sfsn_minus_post_word: return "sfsn_minus_post_word";
        case Variant::sfsn_minus_post_emotion: return "sfsn_minus_post_emotion";
        case Variant::sfsn_minus_comment_word: return "sfsn_minus_comment_word";
        case Variant::sfsn_minus_comment_emotion: return "sfsn_minus_comment_emotion";
        case Variant::no_sfsn: return "no_sfsn";
        case Variant::no_sfsn_no_gain: return "no_sfsn_no_gain";
    }
    throw ContractError("unhandled variant value");
}

Variant variant_from_name(const std::string& name) {
    for (const Variant v : all_variants()) {
        if (variant_name(v) == name) {
            return v;
        }
    }
    throw ConfigError("unknown model variant \"" + name + "\"");
}

std::string encoder_kind_name(EncoderKind kind) {
    return kind == EncoderKind::bilstm ? "bilstm" : "bigru";
}

EncoderKind encoder_kind_from_name(const std::string& name) {
    if (name == "bilstm") {
        return EncoderKind::bilstm;
    }
    if (name == "bigru") {
        return EncoderKind::bigru;
    }
    throw ConfigError("unknown encoder kind \"" + name + "\"");
}

std::string fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::multiply: return "multiply";
        case FusionMode::add: return "add";
        case FusionMode::concat_after: return "concat_after";
    }
    throw ContractError("unhandled fusion mode value");
}

FusionMode fusion_mode_from_name(const std::string& name) {
    if (name == "multiply") {
        return FusionMode::multiply;
    }
    if (name == "add") {
        return FusionMode::add;
    }
    if (name == "concat_after") {
        return FusionMode::concat_after;
    }
    throw ConfigError("unknown fusion mode \"" + name + "\"");
}

ModelConfig paper_model_config() {
    ModelConfig cfg;
    cfg.word_dim = 768;
    cfg.emotion_dim = 300;
    cfg.hidden = 120;
    cfg.heads = 8;
    cfg.blocks = 4;
    cfg.dropout = 0.4;
    return cfg;
}

ModelConfig desk_model_config() {
    ModelConfig cfg;
    cfg.word_dim = 32;
    cfg.emotion_dim = 16;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.dropout = 0.2;
    return cfg;
}

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.word_dim = 8;
    cfg.emotion_dim = 4;
    cfg.hidden = 4;
    cfg.post_len = 6;
    cfg.comment_len = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.dropout = 0.0;
    return cfg;
}

namespace {

void validate_config(const ModelConfig& cfg) {
    if (cfg.vocab_size < 2) {
        throw ConfigError("vocab_size must be at least 2 (pad and OOV rows)");
    }
    if (cfg.word_dim < 1 || cfg.emotion_dim < 1 || cfg.hidden < 1) {
        throw ConfigError("embedding and hidden widths must be positive");
    }
    if (cfg.post_len < 1 || cfg.comment_len < 1) {
        throw ConfigError("sequence lengths must be at least 1");
    }
    if (cfg.heads < 1 || (2 * cfg.hidden) % cfg.heads != 0) {
        throw ConfigError("head count must divide the channel width " +
                          std::to_string(2 * cfg.hidden));
    }
    if (cfg.blocks < 1) {
        throw ConfigError("block count must be at least 1");
    }
    if (cfg.class_count < 2) {
        throw ConfigError("class count must be at least 2");
    }
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
}

const char* kChannelNames[4] = {"post_word", "post_emotion", "comment_word", "comment_emotion"};

}  // namespace

Model::Model(ModelConfig cfg, const Vocabulary* vocab) : cfg_(std::move(cfg)), reg_(cfg_.seed) {
    if (vocab && cfg_.vocab_size == 0) {
        cfg_.vocab_size = vocab->size();
    }
    validate_config(cfg_);
    if (vocab && vocab->size() != cfg_.vocab_size) {
        throw ConfigError("config vocab_size " + std::to_string(cfg_.vocab_size) +
                          " does not match the vocabulary size " +
                          std::to_string(vocab->size()));
    }
    if ((cfg_.word_embedding_file || cfg_.emotion_embedding_file) && !vocab) {
        throw ContractError("embedding files need the vocabulary to resolve tokens");
    }

    if (cfg_.word_embedding_file) {
        word_table_ =
            load_embeddings(cfg_.word_embedding_file, *vocab, cfg_.word_dim, reg_, "embed.word");
    } else {
        word_table_ =
            random_embedding_table(reg_, "embed.word", cfg_.vocab_size, cfg_.word_dim, true);
    }
    if (cfg_.emotion_embedding_file) {
        emotion_table_ = load_embeddings(cfg_.emotion_embedding_file, *vocab, cfg_.emotion_dim,
                                         reg_, "embed.emotion");
    } else {
        emotion_table_ = random_embedding_table(reg_, "embed.emotion", cfg_.vocab_size,
                                                cfg_.emotion_dim, true);
    }

    const std::size_t h = cfg_.hidden;
    encoders_.post_word = make_encoder(reg_, "enc.post_word", cfg_.encoder,
                                       cfg_.word_dim + cfg_.post_len, h);
    encoders_.post_emotion = make_encoder(reg_, "enc.post_emotion", cfg_.encoder,
                                          cfg_.emotion_dim + cfg_.post_len, h);
    encoders_.comment_word = make_encoder(reg_, "enc.comment_word", cfg_.encoder,
                                          cfg_.word_dim + cfg_.comment_len, h);
    encoders_.comment_emotion = make_encoder(reg_, "enc.comment_emotion", cfg_.encoder,
                                             cfg_.emotion_dim + cfg_.comment_len, h);

    gain_ = make_gain(reg_, "gain", 4 * h, 2 * h);

    auto wide_projection = [&](const char* group, PerChannel<Tensor>& w,
                               PerChannel<Tensor>& b) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(8 * h));
        Tensor* ws[4] = {&w.post_word, &w.post_emotion, &w.comment_word, &w.comment_emotion};
        Tensor* bs[4] = {&b.post_word, &b.post_emotion, &b.comment_word, &b.comment_emotion};
        for (std::size_t c = 0; c < 4; ++c) {
            const std::string base = std::string("gain.") + group + "." + kChannelNames[c];
            *ws[c] = reg_.uniform(base + ".w", {8 * h, 2 * h}, bound);
            *bs[c] = reg_.uniform(base + ".b", {2 * h}, bound);
        }
    };
    if (cfg_.variant == Variant::no_gain_concat) {
        wide_projection("concat", concat_w_, concat_b_);
    }
    if (cfg_.variant == Variant::no_adaptive) {
        wide_projection("adapt", adapt_w_, adapt_b_);
    }

    sfsn_.post_word = make_sfsn_channel(reg_, "sfsn.post_word", 2 * h, cfg_.heads, cfg_.blocks);
    sfsn_.post_emotion =
        make_sfsn_channel(reg_, "sfsn.post_emotion", 2 * h, cfg_.heads, cfg_.blocks);
    sfsn_.comment_word =
        make_sfsn_channel(reg_, "sfsn.comment_word", 2 * h, cfg_.heads, cfg_.blocks);
    sfsn_.comment_emotion =
        make_sfsn_channel(reg_, "sfsn.comment_emotion", 2 * h, cfg_.heads, cfg_.blocks);

    const std::size_t pooled_per_channel =
        (cfg_.fusion == FusionMode::concat_after && cfg_.variant != Variant::no_sfsn_no_gain)
            ? 4 * h
            : 2 * h;
    dense_ = make_dense(reg_, "dense", cfg_.class_count, 4 * pooled_per_channel);
}

PerChannel<std::optional<Tensor>> Model::interactions(
    Tape& tape, const PerChannel<Tensor>& encoded,
    const PerChannel<const std::vector<std::uint8_t>*>& masks) const {
    PerChannel<std::optional<Tensor>> out;
    const Variant v = cfg_.variant;
    if (v == Variant::no_sfsn || v == Variant::no_sfsn_no_gain) {
        return out;
    }

    const PooledPair pooled = pool_and_concat(tape, encoded, masks);
    Tensor source;
    const PerChannel<Tensor>* w = &gain_.w_t;
    const PerChannel<Tensor>* b = &gain_.b_t;
    switch (v) {
        case Variant::no_gain_concat:
            source = tape.concat({pooled.post, pooled.comment}, 1);
            w = &concat_w_;
            b = &concat_b_;
            break;
        case Variant::no_adaptive: {
            const GateOut conflict = conflicting_gate(tape, pooled.post, pooled.comment, gain_);
            const GateOut refine = refining_gate(tape, pooled.post, pooled.comment, gain_);
            source = tape.concat({refine.features, conflict.features}, 1);
            w = &adapt_w_;
            b = &adapt_b_;
            break;
        }
        case Variant::no_conflicting: {
            const GateOut refine = refining_gate(tape, pooled.post, pooled.comment, gain_);
            source = refine.features;
            break;
        }
        case Variant::no_refining: {
            const GateOut conflict = conflicting_gate(tape, pooled.post, pooled.comment, gain_);
            source = conflict.features;
            break;
        }
        default: {
            const GateOut conflict = conflicting_gate(tape, pooled.post, pooled.comment, gain_);
            const GateOut refine = refining_gate(tape, pooled.post, pooled.comment, gain_);
            source = adaptive_combine(tape, refine.features, conflict.features, refine.mu);
            break;
        }
    }

    const bool skip[4] = {v == Variant::sfsn_minus_post_word,
                          v == Variant::sfsn_minus_post_emotion,
                          v == Variant::sfsn_minus_comment_word,
                          v == Variant::sfsn_minus_comment_emotion};
    const Tensor* ws[4] = {&w->post_word, &w->post_emotion, &w->comment_word,
                           &w->comment_emotion};
    const Tensor* bs[4] = {&b->post_word, &b->post_emotion, &b->comment_word,
                           &b->comment_emotion};
    std::optional<Tensor>* slots[4] = {&out.post_word, &out.post_emotion, &out.comment_word,
                                       &out.comment_emotion};
    for (std::size_t c = 0; c < 4; ++c) {
        if (!skip[c]) {
            *slots[c] = interaction_vector(tape, source, *ws[c], *bs[c]);
        }
    }
    return out;
}

Tensor Model::forward_impl(Tape& tape, const TokenizedThread& thread, Mode mode,
                           Rng* dropout_rng, FusionMode fusion, ThreadTrace* trace,
                           bool classify) const {
    if (thread.post_ids.size() != cfg_.post_len ||
        thread.post_mask.size() != cfg_.post_len ||
        thread.comment_ids.size() != cfg_.comment_len ||
        thread.comment_mask.size() != cfg_.comment_len) {
        throw ConfigError("thread " + thread.id + " is not padded to lengths (" +
                          std::to_string(cfg_.post_len) + ", " +
                          std::to_string(cfg_.comment_len) + ")");
    }
    const bool dropping = mode == Mode::train && cfg_.dropout > 0.0;
    if (dropping && !dropout_rng) {
        throw ContractError("training forward with dropout needs an rng");
    }

    auto real_prefix = [](const std::vector<std::size_t>& ids,
                          const std::vector<std::uint8_t>& mask) {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (mask[i]) {
                out.push_back(ids[i]);
            }
        }
        return out;
    };
    const std::vector<std::size_t> post_tokens = real_prefix(thread.post_ids, thread.post_mask);
    const std::vector<std::size_t> comment_tokens =
        real_prefix(thread.comment_ids, thread.comment_mask);

    auto channel = [&](const std::vector<std::size_t>& tokens, const EmbeddingTable& table,
                       std::size_t max_len, const EncoderParams& enc) {
        EmbeddedSequence seq = embed_sequence(tape, tokens, table, max_len);
        if (dropping) {
            seq.rows = dropout(tape, seq.rows, cfg_.dropout, mode, *dropout_rng);
        }
        Tensor states = encode_sequence(tape, seq.rows, enc, seq.mask);
        return std::pair{states, seq.mask};
    };

    const auto [e_pw, m_pw] =
        channel(post_tokens, word_table_, cfg_.post_len, encoders_.post_word);
    const auto [e_pe, m_pe] =
        channel(post_tokens, emotion_table_, cfg_.post_len, encoders_.post_emotion);
    const auto [e_cw, m_cw] =
        channel(comment_tokens, word_table_, cfg_.comment_len, encoders_.comment_word);
    const auto [e_ce, m_ce] =
        channel(comment_tokens, emotion_table_, cfg_.comment_len, encoders_.comment_emotion);

    const PerChannel<Tensor> encoded{e_pw, e_pe, e_cw, e_ce};
    const PerChannel<const std::vector<std::uint8_t>*> masks{&m_pw, &m_pe, &m_cw, &m_ce};

    PerChannel<Tensor> pooled;
    if (cfg_.variant == Variant::no_sfsn_no_gain) {
        auto pool = [&](const Tensor& states, const std::vector<std::uint8_t>& mask,
                        std::vector<std::size_t>* winners) {
            MaxPoolResult r = tape.max_pool(states, &mask);
            if (winners) {
                *winners = std::move(r.argmax);
            }
            return r.values;
        };
        pooled.post_word = pool(e_pw, m_pw, trace ? &trace->argmax.post_word : nullptr);
        pooled.post_emotion = pool(e_pe, m_pe, trace ? &trace->argmax.post_emotion : nullptr);
        pooled.comment_word = pool(e_cw, m_cw, trace ? &trace->argmax.comment_word : nullptr);
        pooled.comment_emotion =
            pool(e_ce, m_ce, trace ? &trace->argmax.comment_emotion : nullptr);
    } else {
        const PerChannel<std::optional<Tensor>> inter = interactions(tape, encoded, masks);
        const DropoutCtx drop{cfg_.dropout, mode, dropping ? dropout_rng : nullptr};
        auto run = [&](const Tensor& states, const std::optional<Tensor>& t,
                       const SfsnChannelParams& params, const std::vector<std::uint8_t>& mask,
                       std::vector<std::size_t>* winners) {
            SfsnResult r = sfsn_channel(tape, states, t ? &*t : nullptr, params, mask, fusion,
                                        drop, cfg_.attention_residual);
            if (winners) {
                *winners = std::move(r.argmax);
            }
            return r.pooled;
        };
        pooled.post_word =
            run(e_pw, inter.post_word, sfsn_.post_word, m_pw,
                trace ? &trace->argmax.post_word : nullptr);
        pooled.post_emotion =
            run(e_pe, inter.post_emotion, sfsn_.post_emotion, m_pe,
                trace ? &trace->argmax.post_emotion : nullptr);
        pooled.comment_word =
            run(e_cw, inter.comment_word, sfsn_.comment_word, m_cw,
                trace ? &trace->argmax.comment_word : nullptr);
        pooled.comment_emotion =
            run(e_ce, inter.comment_emotion, sfsn_.comment_emotion, m_ce,
                trace ? &trace->argmax.comment_emotion : nullptr);
    }

    if (!classify) {
        return Tensor::zeros({1});
    }
    const IntegratedFeatures feats = integrate_channels(
        tape, pooled.post_word, pooled.post_emotion, pooled.comment_word,
        pooled.comment_emotion);
    return dense_softmax(tape, feats.combined, dense_);
}

Tensor Model::forward_thread(Tape& tape, const TokenizedThread& thread, Mode mode,
                             Rng* dropout_rng, ThreadTrace* trace) const {
    return forward_impl(tape, thread, mode, dropout_rng, cfg_.fusion, trace, true);
}

Tensor Model::forward_batch(Tape& tape, const std::vector<TokenizedThread>& batch, Mode mode,
                            Rng* dropout_rng) const {
    if (batch.empty()) {
        throw ContractError("forward_batch needs at least one thread");
    }
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const TokenizedThread& t : batch) {
        const Tensor p = forward_thread(tape, t, mode, dropout_rng);
        rows.push_back(tape.reshape(p, {1, cfg_.class_count}));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
}

AttributionReport Model::attribute(const Thread& thread, const Vocabulary& vocab,
                                   FusionMode mode) const {
    const TokenizedThread tok =
        tokenize_and_pad(thread, vocab, cfg_.post_len, cfg_.comment_len);

    AttributionReport report;
    report.post_truncated = tokenize(thread.post).size() > cfg_.post_len;
    std::size_t comment_total = 0;
    for (const Comment& c : thread.comments) {
        comment_total += tokenize(c.text).size();
    }
    report.comments_truncated = comment_total > cfg_.comment_len;

    Tape tape(false);
    ThreadTrace trace;
    forward_impl(tape, tok, Mode::infer, nullptr, mode, &trace, false);

    auto fill = [&](ChannelAttribution& out, const std::vector<std::size_t>& winners,
                    const std::vector<std::size_t>& ids,
                    const std::vector<std::uint8_t>& mask) {
        const std::size_t len = ids.size();
        out.counts.assign(len, 0);
        // Only the attention-block half carries position information in the
        // widening fusion mode; the appended interaction rows are identical
        // across positions.
        const std::size_t take = std::min(winners.size(), 2 * cfg_.hidden);
        for (std::size_t d = 0; d < take; ++d) {
            out.counts[winners[d]] += 1;
        }
        out.tokens.assign(len, "");
        for (std::size_t i = 0; i < len; ++i) {
            if (mask[i]) {
                out.tokens[i] = vocab.to_token[ids[i] < vocab.size() ? ids[i]
                                                                     : Vocabulary::oov_id];
            }
        }
        out.ranking.resize(len);
        for (std::size_t i = 0; i < len; ++i) {
            out.ranking[i] = i;
        }
        std::stable_sort(out.ranking.begin(), out.ranking.end(),
                         [&](std::size_t a, std::size_t b) {
                             return out.counts[a] > out.counts[b];
                         });
    };
    fill(report.post_word, trace.argmax.post_word, tok.post_ids, tok.post_mask);
    fill(report.post_emotion, trace.argmax.post_emotion, tok.post_ids, tok.post_mask);
    fill(report.comment_word, trace.argmax.comment_word, tok.comment_ids, tok.comment_mask);
    fill(report.comment_emotion, trace.argmax.comment_emotion, tok.comment_ids,
         tok.comment_mask);
    return report;
}

Tensor cross_entropy(Tape& tape, const Tensor& probs, const std::vector<int>& labels) {
    std::size_t batch = 0;
    std::size_t classes = 0;
    if (probs.rank() == 2) {
        batch = probs.extent(0);
        classes = probs.extent(1);
    } else {
        batch = 1;
        classes = probs.numel();
    }
    if (labels.size() != batch) {
        throw ContractError("got " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(batch) + " probability rows");
    }
    std::vector<Tensor> terms;
    terms.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw ContractError("label " + std::to_string(label) + " at row " +
                                std::to_string(i) + " is outside the " +
                                std::to_string(classes) + " classes");
        }
        const Tensor picked =
            tape.element(probs, i * classes + static_cast<std::size_t>(label));
        terms.push_back(tape.log(tape.clamp_min(picked, 1e-12)));
    }
    const Tensor stacked = terms.size() == 1 ? terms[0] : tape.concat(terms, 0);
    return tape.scale(tape.sum(stacked), -1.0 / static_cast<double>(batch));
}

}  // namespace aifn
