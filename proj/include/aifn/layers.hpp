#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "aifn/rng.hpp"
#include "aifn/tensor.hpp"

namespace aifn {

// Forward passes run in one of two modes; only dropout behaves differently.
enum class Mode { train, infer };

enum class EncoderKind { bilstm, bigru };

// Ordered, named store of trainable tensors. Creation through named per-tensor
// RNG streams means a parameter's initial values depend only on (seed, name),
// never on how many parameters were created before it. That keeps shared
// parameters identical across model variants that allocate different extras.
class ParamRegistry {
public:
    explicit ParamRegistry(std::uint64_t seed) : seed_(seed) {}

    // New tensor with values uniform in (-bound, +bound).
    Tensor uniform(const std::string& name, Shape shape, double bound, bool requires_grad = true);
    // New tensor filled with a constant.
    Tensor constant(const std::string& name, Shape shape, double value, bool requires_grad = true);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    Tensor find(const std::string& name) const;  // throws ContractError when absent
    std::uint64_t seed() const { return seed_; }
    void zero_grads() const;

private:
    std::uint64_t seed_;
    std::vector<std::pair<std::string, Tensor>> items_;

    Tensor add(const std::string& name, Tensor t);
};

struct EmbeddingTable {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    Tensor matrix;  // [vocab_size x dim]; row 0 is the all-zero pad row
    std::size_t oov_id = 1;
};

// Seeded random table, uniform(-0.1, 0.1), pad row zeroed.
EmbeddingTable random_embedding_table(ParamRegistry& reg, const std::string& name,
                                      std::size_t vocab_size, std::size_t dim, bool trainable);

struct EmbeddedSequence {
    Tensor rows;                     // [L x (dim + L)]
    std::vector<std::uint8_t> mask;  // 1 for real positions, 0 for padding
};

// Row i = [table[token_i] ; one_hot(i, L)]; rows past the end stay all-zero.
// Ids outside the vocabulary map to the OOV row. Longer inputs are truncated.
EmbeddedSequence embed_sequence(Tape& tape, const std::vector<std::size_t>& tokens,
                                const EmbeddingTable& table, std::size_t max_len);

// One direction of a recurrent encoder. Gate order: LSTM (input, forget,
// output, candidate); GRU (reset, update, candidate).
struct RnnDirection {
    std::vector<Tensor> w_in;   // per gate [in_dim x h]
    std::vector<Tensor> w_rec;  // per gate [h x h]
    std::vector<Tensor> bias;   // per gate [h]
};

struct EncoderParams {
    EncoderKind kind = EncoderKind::bilstm;
    std::size_t in_dim = 0;
    std::size_t hidden = 0;
    RnnDirection fwd;
    RnnDirection bwd;
};

// Weights uniform(-1/sqrt(h), 1/sqrt(h)); the LSTM forget-gate bias starts
// raised by +1.
EncoderParams make_encoder(ParamRegistry& reg, const std::string& prefix, EncoderKind kind,
                           std::size_t in_dim, std::size_t hidden);

// Bidirectional encoding to [L x 2h]. Padded positions emit zero rows and do
// not advance the recurrent state in either direction.
Tensor encode_sequence(Tape& tape, const Tensor& x, const EncoderParams& params,
                       const std::vector<std::uint8_t>& mask);

struct AttentionParams {
    std::size_t width = 0;   // 2h
    std::size_t heads = 0;   // j
    std::size_t d_k = 0;     // width / heads
    std::vector<Tensor> w_q;  // per head [2h x d_k]
    std::vector<Tensor> w_k;
    std::vector<Tensor> w_v;
    Tensor w_o;  // [2h x 2h]
};

// Throws ConfigError when heads does not divide width.
AttentionParams make_attention(ParamRegistry& reg, const std::string& prefix, std::size_t width,
                               std::size_t heads);

// Self-attention with queries = keys = values = x. Padded key positions are
// pushed to -1e30 before the softmax, so they get zero weight without ever
// producing NaN. Output [L x 2h]; optional residual adds x back.
Tensor multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& params,
                            const std::vector<std::uint8_t>& mask, bool residual = false);

struct FFNParams {
    Tensor w1, w2;  // [2h x 2h]
    Tensor b1, b2;  // [2h]
};

FFNParams make_ffn(ParamRegistry& reg, const std::string& prefix, std::size_t width);

// Position-wise relu(x W1 + b1) W2 + b2.
Tensor feed_forward(Tape& tape, const Tensor& x, const FFNParams& params);

// Inverted dropout: train mode zeroes entries with the given probability and
// rescales survivors by 1/(1-rate); infer mode and rate 0 are the identity.
Tensor dropout(Tape& tape, const Tensor& x, double rate, Mode mode, Rng& rng);

struct DenseParams {
    Tensor w;  // [class_count x feature_dim]
    Tensor b;  // [class_count]
};

DenseParams make_dense(ParamRegistry& reg, const std::string& prefix, std::size_t class_count,
                       std::size_t feature_dim);

// softmax(W x + b) over classes; x is a flat feature vector.
Tensor dense_softmax(Tape& tape, const Tensor& x, const DenseParams& params);

}  // namespace aifn
