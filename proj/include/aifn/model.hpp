#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aifn/corpus.hpp"
#include "aifn/fusion.hpp"
#include "aifn/layers.hpp"
#include "aifn/tensor.hpp"

namespace aifn {

// Which piece of the architecture a model instance runs without. Exactly one
// is active per instance; "full" is the whole pipeline.
enum class Variant {
    full,
    no_gain_concat,   // both gates replaced by a linear+tanh over the raw pooled concat
    no_conflicting,   // combined features = refined features only
    no_refining,      // combined features = conflicting features only
    no_adaptive,      // gate blend replaced by concatenating both gate outputs
    sfsn_minus_post_word,      // that one channel runs without its interaction vector
    sfsn_minus_post_emotion,
    sfsn_minus_comment_word,
    sfsn_minus_comment_emotion,
    no_sfsn,          // every channel runs without an interaction vector
    no_sfsn_no_gain,  // encoders straight to pooled concat and classifier
};

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // ConfigError on unknown names

std::string encoder_kind_name(EncoderKind kind);
EncoderKind encoder_kind_from_name(const std::string& name);
std::string fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_name(const std::string& name);

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t word_dim = 32;
    std::size_t emotion_dim = 16;
    std::size_t hidden = 16;
    std::size_t post_len = 32;
    std::size_t comment_len = 96;
    std::size_t heads = 2;
    std::size_t blocks = 1;
    std::size_t class_count = 2;
    double dropout = 0.2;
    EncoderKind encoder = EncoderKind::bilstm;
    FusionMode fusion = FusionMode::multiply;
    bool attention_residual = false;
    Variant variant = Variant::full;
    std::uint64_t seed = 0;
    std::optional<std::string> word_embedding_file;
    std::optional<std::string> emotion_embedding_file;
};

// Full-scale configuration: wide embeddings, hidden 120, eight heads, four
// attention blocks. Sequence lengths stay at their workstation defaults.
ModelConfig paper_model_config();
// Sized to train in seconds on one core.
ModelConfig desk_model_config();
// Smallest config that exercises every code path; used by gradient checks.
ModelConfig tiny_model_config();

// Per-channel pooling winners from one forward pass, for attribution.
struct ThreadTrace {
    PerChannel<std::vector<std::size_t>> argmax;
};

struct ChannelAttribution {
    std::vector<std::size_t> counts;  // per position; sums to the channel width 2h
    std::vector<std::string> tokens;  // token text per position, "" past the real length
    std::vector<std::size_t> ranking;  // positions sorted by count, highest first
};

struct AttributionReport {
    ChannelAttribution post_word;
    ChannelAttribution post_emotion;
    ChannelAttribution comment_word;
    ChannelAttribution comment_emotion;
    bool post_truncated = false;
    bool comments_truncated = false;
};

class Model {
public:
    // The vocabulary is only needed when the config names embedding files.
    explicit Model(ModelConfig cfg, const Vocabulary* vocab = nullptr);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    // Probability row [class_count] for one thread. A non-null trace receives
    // the pooling winners. Dropout needs an rng in train mode when the rate
    // is positive.
    Tensor forward_thread(Tape& tape, const TokenizedThread& thread, Mode mode,
                          Rng* dropout_rng = nullptr, ThreadTrace* trace = nullptr) const;

    // Stacked probability rows [batch x class_count].
    Tensor forward_batch(Tape& tape, const std::vector<TokenizedThread>& batch, Mode mode,
                         Rng* dropout_rng = nullptr) const;

    // Pooling-winner counts per channel under the given fusion mode. The
    // widening mode counts only the attention-block half of the pooled
    // vector, so counts always sum to 2h.
    AttributionReport attribute(const Thread& thread, const Vocabulary& vocab,
                                FusionMode mode) const;

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    EmbeddingTable word_table_;
    EmbeddingTable emotion_table_;
    PerChannel<EncoderParams> encoders_;
    GainParams gain_;
    PerChannel<Tensor> concat_w_, concat_b_;  // no_gain_concat projections [8h x 2h]
    PerChannel<Tensor> adapt_w_, adapt_b_;    // no_adaptive projections [8h x 2h]
    PerChannel<SfsnChannelParams> sfsn_;
    DenseParams dense_;

    PerChannel<std::optional<Tensor>> interactions(
        Tape& tape, const PerChannel<Tensor>& encoded,
        const PerChannel<const std::vector<std::uint8_t>*>& masks) const;
    Tensor forward_impl(Tape& tape, const TokenizedThread& thread, Mode mode, Rng* dropout_rng,
                        FusionMode fusion, ThreadTrace* trace, bool classify) const;
};

// Mean over the batch of -log p[label], with probabilities clamped to 1e-12
// from below. Labels outside [0, class_count) raise a contract error.
Tensor cross_entropy(Tape& tape, const Tensor& probs, const std::vector<int>& labels);

// Round trip between a config and a JSON object. Missing keys keep the base
// config's values, so partial files work as overrides; unknown keys raise a
// format error to catch typos.
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text, ModelConfig base = ModelConfig());

struct CheckpointMeta {
    ModelConfig config;
    std::size_t epoch = 0;
    double val_metric = 0.0;
};

// Self-describing binary snapshot: magic "AIFN1", a length-prefixed JSON
// config block, then one record per parameter. Loading rebuilds the model
// and reproduces bit-identical forward outputs.
void save_checkpoint(const Model& model, const std::string& path, std::size_t epoch,
                     double val_metric);
struct LoadedCheckpoint {
    Model model;
    CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace aifn
