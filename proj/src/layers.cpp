#include "aifn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace aifn {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    for (const auto& [existing, _] : items_) {
        if (existing == name) {
            throw ContractError("parameter name already registered: " + name);
        }
    }
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::uniform(const std::string& name, Shape shape, double bound,
                              bool requires_grad) {
    std::size_t n = 1;
    for (const std::size_t e : shape) {
        n *= e;
    }
    Rng rng = named_rng(seed_, name);
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-bound, bound);
    }
    return add(name, Tensor::leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor ParamRegistry::constant(const std::string& name, Shape shape, double value,
                               bool requires_grad) {
    return add(name, Tensor::full(std::move(shape), value, requires_grad));
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [_, t] : items_) {
        out.push_back(t);
    }
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& [n, t] : items_) {
        if (n == name) {
            return t;
        }
    }
    throw ContractError("no such parameter: " + name);
}

void ParamRegistry::zero_grads() const {
    for (const auto& [_, t] : items_) {
        t.zero_grad();
    }
}

EmbeddingTable random_embedding_table(ParamRegistry& reg, const std::string& name,
                                      std::size_t vocab_size, std::size_t dim, bool trainable) {
    EmbeddingTable table;
    table.vocab_size = vocab_size;
    table.dim = dim;
    table.matrix = reg.uniform(name, {vocab_size, dim}, 0.1, trainable);
    auto vals = table.matrix.values_mut();
    std::fill(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(dim), 0.0);
    return table;
}

EmbeddedSequence embed_sequence(Tape& tape, const std::vector<std::size_t>& tokens,
                                const EmbeddingTable& table, std::size_t max_len) {
    const std::size_t L = max_len;
    if (L == 0) {
        throw DimensionError("embed_sequence: max length must be positive");
    }
    const std::size_t n = std::min(tokens.size(), L);
    std::vector<std::size_t> ids(L, 0);  // id 0 is the pad row
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = tokens[i] < table.vocab_size ? tokens[i] : table.oov_id;
    }
    const Tensor word = tape.gather_rows(table.matrix, ids);  // [L x dim]
    std::vector<double> pos(L * L, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        pos[i * L + i] = 1.0;
    }
    const Tensor one_hot = Tensor::leaf({L, L}, std::move(pos));
    EmbeddedSequence out;
    out.rows = tape.concat({word, one_hot}, 1);
    out.mask.assign(L, 0);
    std::fill(out.mask.begin(), out.mask.begin() + static_cast<std::ptrdiff_t>(n), 1);
    return out;
}

namespace {

RnnDirection make_direction(ParamRegistry& reg, const std::string& prefix, EncoderKind kind,
                            std::size_t in_dim, std::size_t h) {
    const std::size_t gates = kind == EncoderKind::bilstm ? 4 : 3;
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    RnnDirection dir;
    for (std::size_t g = 0; g < gates; ++g) {
        const std::string tag = prefix + ".g" + std::to_string(g);
        dir.w_in.push_back(reg.uniform(tag + ".w_in", {in_dim, h}, bound));
        dir.w_rec.push_back(reg.uniform(tag + ".w_rec", {h, h}, bound));
        dir.bias.push_back(reg.uniform(tag + ".bias", {h}, bound));
    }
    if (kind == EncoderKind::bilstm) {
        // Forget gate starts open so early training can carry state.
        auto fb = dir.bias[1].values_mut();
        for (double& v : fb) {
            v += 1.0;
        }
    }
    return dir;
}

}  // namespace

EncoderParams make_encoder(ParamRegistry& reg, const std::string& prefix, EncoderKind kind,
                           std::size_t in_dim, std::size_t hidden) {
    if (in_dim == 0 || hidden == 0) {
        throw ConfigError("encoder dims must be positive");
    }
    EncoderParams p;
    p.kind = kind;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.fwd = make_direction(reg, prefix + ".fwd", kind, in_dim, hidden);
    p.bwd = make_direction(reg, prefix + ".bwd", kind, in_dim, hidden);
    return p;
}

Tensor encode_sequence(Tape& tape, const Tensor& x, const EncoderParams& params,
                       const std::vector<std::uint8_t>& mask) {
    if (x.rank() != 2 || x.shape()[1] != params.in_dim) {
        throw DimensionError("encode_sequence: input " + shape_str(x.shape()) +
                             " does not match declared width " + std::to_string(params.in_dim));
    }
    const std::size_t L = x.shape()[0];
    if (mask.size() != L) {
        throw DimensionError("encode_sequence: mask length " + std::to_string(mask.size()) +
                             " does not match " + std::to_string(L) + " positions");
    }
    const std::size_t h = params.hidden;
    const Tensor zero_row = Tensor::zeros({1, h});
    const Tensor ones_row = Tensor::full({1, h}, 1.0);

    auto run_direction = [&](const RnnDirection& dir, bool reverse) {
        std::vector<Tensor> outs(L);
        Tensor hs = zero_row;
        Tensor cs = zero_row;
        for (std::size_t step = 0; step < L; ++step) {
            const std::size_t t = reverse ? L - 1 - step : step;
            if (!mask[t]) {
                outs[t] = zero_row;
                continue;
            }
            const Tensor xt = tape.gather_rows(x, {t});
            auto pre = [&](std::size_t g) {
                return tape.add(
                    tape.add(tape.matmul(xt, dir.w_in[g]), tape.matmul(hs, dir.w_rec[g])),
                    dir.bias[g]);
            };
            if (params.kind == EncoderKind::bilstm) {
                const Tensor gi = tape.sigmoid(pre(0));
                const Tensor gf = tape.sigmoid(pre(1));
                const Tensor go = tape.sigmoid(pre(2));
                const Tensor gc = tape.tanh(pre(3));
                cs = tape.add(tape.mul(gf, cs), tape.mul(gi, gc));
                hs = tape.mul(go, tape.tanh(cs));
            } else {
                const Tensor gr = tape.sigmoid(pre(0));
                const Tensor gz = tape.sigmoid(pre(1));
                const Tensor cand = tape.tanh(
                    tape.add(tape.add(tape.matmul(xt, dir.w_in[2]),
                                      tape.mul(gr, tape.matmul(hs, dir.w_rec[2]))),
                             dir.bias[2]));
                hs = tape.add(tape.mul(tape.sub(ones_row, gz), cand), tape.mul(gz, hs));
            }
            outs[t] = hs;
        }
        return outs;
    };

    const auto f = run_direction(params.fwd, false);
    const auto b = run_direction(params.bwd, true);
    std::vector<Tensor> rows;
    rows.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        rows.push_back(tape.concat({f[t], b[t]}, 1));
    }
    return tape.concat(rows, 0);
}

AttentionParams make_attention(ParamRegistry& reg, const std::string& prefix, std::size_t width,
                               std::size_t heads) {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("attention head count " + std::to_string(heads) +
                          " must divide width " + std::to_string(width));
    }
    AttentionParams p;
    p.width = width;
    p.heads = heads;
    p.d_k = width / heads;
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < heads; ++i) {
        const std::string tag = prefix + ".h" + std::to_string(i);
        p.w_q.push_back(reg.uniform(tag + ".w_q", {width, p.d_k}, bound));
        p.w_k.push_back(reg.uniform(tag + ".w_k", {width, p.d_k}, bound));
        p.w_v.push_back(reg.uniform(tag + ".w_v", {width, p.d_k}, bound));
    }
    p.w_o = reg.uniform(prefix + ".w_o", {width, width}, bound);
    return p;
}

Tensor multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& params,
                            const std::vector<std::uint8_t>& mask, bool residual) {
    if (x.rank() != 2 || x.shape()[1] != params.width) {
        throw DimensionError("attention: input " + shape_str(x.shape()) +
                             " does not match width " + std::to_string(params.width));
    }
    const std::size_t L = x.shape()[0];
    if (mask.size() != L) {
        throw DimensionError("attention: mask length " + std::to_string(mask.size()) +
                             " does not match " + std::to_string(L) + " positions");
    }
    // Padded keys take a huge negative score: after max-subtraction their
    // exponent underflows to exactly zero weight. A finite constant keeps the
    // all-padded corner NaN-free, unlike -inf.
    bool any_pad = false;
    std::vector<double> bias(L, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        if (!mask[t]) {
            bias[t] = -1e30;
            any_pad = true;
        }
    }
    const Tensor key_bias = Tensor::leaf({L}, std::move(bias));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.d_k));
    std::vector<Tensor> heads;
    heads.reserve(params.heads);
    for (std::size_t i = 0; i < params.heads; ++i) {
        const Tensor q = tape.matmul(x, params.w_q[i]);
        const Tensor k = tape.matmul(x, params.w_k[i]);
        const Tensor v = tape.matmul(x, params.w_v[i]);
        Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk);
        if (any_pad) {
            scores = tape.add(scores, key_bias);
        }
        const Tensor weights = tape.softmax(scores, 1);
        heads.push_back(tape.matmul(weights, v));
    }
    Tensor out = tape.matmul(heads.size() == 1 ? heads[0] : tape.concat(heads, 1), params.w_o);
    if (residual) {
        out = tape.add(out, x);
    }
    return out;
}

FFNParams make_ffn(ParamRegistry& reg, const std::string& prefix, std::size_t width) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    FFNParams p;
    p.w1 = reg.uniform(prefix + ".w1", {width, width}, bound);
    p.b1 = reg.uniform(prefix + ".b1", {width}, bound);
    p.w2 = reg.uniform(prefix + ".w2", {width, width}, bound);
    p.b2 = reg.uniform(prefix + ".b2", {width}, bound);
    return p;
}

Tensor feed_forward(Tape& tape, const Tensor& x, const FFNParams& params) {
    const Tensor hidden = tape.relu(tape.add(tape.matmul(x, params.w1), params.b1));
    return tape.add(tape.matmul(hidden, params.w2), params.b2);
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, Mode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::infer || rate == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> m(x.numel());
    for (double& v : m) {
        v = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    return tape.mul(x, Tensor::leaf(x.shape(), std::move(m)));
}

DenseParams make_dense(ParamRegistry& reg, const std::string& prefix, std::size_t class_count,
                       std::size_t feature_dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    DenseParams p;
    p.w = reg.uniform(prefix + ".w", {class_count, feature_dim}, bound);
    p.b = reg.uniform(prefix + ".b", {class_count}, bound);
    return p;
}

Tensor dense_softmax(Tape& tape, const Tensor& x, const DenseParams& params) {
    const std::size_t features = params.w.shape()[1];
    const std::size_t classes = params.w.shape()[0];
    Tensor col = x;
    if (x.rank() == 1) {
        col = tape.reshape(x, {x.numel(), 1});
    } else if (x.rank() == 2 && x.shape()[0] == 1) {
        col = tape.reshape(x, {x.shape()[1], 1});
    }
    if (col.shape()[0] != features) {
        throw DimensionError("dense_softmax: feature vector " + shape_str(x.shape()) +
                             " does not match weight " + shape_str(params.w.shape()));
    }
    const Tensor logits = tape.add(tape.reshape(tape.matmul(params.w, col), {classes}), params.b);
    return tape.softmax(logits, 0);
}

}  // namespace aifn
