#include "aifn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "aifn/rng.hpp"

namespace aifn {

namespace detail {

// Shared plumbing for the elementwise binaries: one value rule plus the two
// partial derivatives, evaluated at the operand values.
struct EwiseSpec {
    const char* name;
    double (*combine)(double, double);
    double (*da)(double, double);
    double (*db)(double, double);
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_tape_counter{1};

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > 2) {
        throw DimensionError("tensor rank must be 1 or 2, got " + shape_str(s));
    }
    for (const std::size_t e : s) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_str(s));
        }
    }
}

enum class Bcast { none, b_vec, a_vec };

Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
    if (a == b) {
        return Bcast::none;
    }
    if (a.size() == 2 && b.size() == 1 && b[0] == a[1]) {
        return Bcast::b_vec;
    }
    if (a.size() == 1 && b.size() == 2 && a[0] == b[1]) {
        return Bcast::a_vec;
    }
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " are neither equal nor vector-over-last-axis broadcastable");
}

using StoragePtr = std::shared_ptr<detail::TensorStorage>;

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << (i ? "x" : "") << s[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("leaf: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto s = std::make_shared<detail::TensorStorage>();
    s->shape = std::move(shape);
    s->values = std::move(values);
    s->requires_grad = requires_grad;
    if (requires_grad) {
        s->ensure_grad();
    }
    return Tensor(std::move(s));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return leaf({1}, {v}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item: tensor " + shape_str(shape()) + " is not a scalar");
    }
    return s_->values[0];
}

Tape::Tape(bool grad_enabled)
    : grad_enabled_(grad_enabled), stamp_(g_tape_counter.fetch_add(1)) {}

int Tape::register_leaf(const Tensor& t) {
    auto& s = *t.s_;
    if (s.tape_stamp == stamp_) {
        return s.node_id;
    }
    s.tape_stamp = stamp_;
    s.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{nullptr, t.s_, {}, "leaf"});
    return s.node_id;
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> values,
                    const std::vector<Tensor>& inputs) {
    auto out = std::make_shared<detail::TensorStorage>();
    out->shape = std::move(shape);
    out->values = std::move(values);
    bool rec = false;
    for (const Tensor& t : inputs) {
        rec = rec || t.requires_grad();
    }
    rec = rec && grad_enabled_;
    out->requires_grad = rec;
    if (rec) {
        std::vector<int> ids;
        ids.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            ids.push_back(register_leaf(t));
        }
        out->tape_stamp = stamp_;
        out->node_id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{nullptr, out, std::move(ids), op});
    }
    return Tensor(std::move(out));
}

void Tape::set_backward(const Tensor& out, std::function<void()> fn) {
    if (out.requires_grad()) {
        nodes_.back().backward = std::move(fn);
    }
}

bool Tape::topologically_ordered() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (const int in : nodes_[i].inputs) {
            if (in < 0 || static_cast<std::size_t>(in) >= i) {
                return false;
            }
        }
    }
    return true;
}

void Tape::backward(const Tensor& loss) {
    if (!grad_enabled_) {
        throw ContractError("backward: tape was created with gradients disabled");
    }
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    auto& ls = *loss.s_;
    if (ls.tape_stamp != stamp_) {
        // A bare leaf never consumed by any op: dLoss/dLoss = 1 and nothing else.
        if (ls.tape_stamp == 0 && ls.node_id == -1) {
            if (ls.requires_grad) {
                ls.ensure_grad();
                ls.grad[0] += 1.0;
            }
            return;
        }
        throw ContractError("backward: loss lives on a different tape");
    }
    // Interior gradients restart at zero each pass; leaf gradients accumulate.
    for (Node& n : nodes_) {
        if (n.backward) {
            n.out->ensure_grad();
            std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
        }
    }
    ls.ensure_grad();
    ls.grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward) {
            it->backward();
        }
    }
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
    const double* av = a.values().data();
    const double* bv = b.values().data();
    std::vector<double> out(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = av[i * n + k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = bv + k * p;
            double* orow = out.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    Tensor res = record("matmul", {m, p}, std::move(out), {a, b});
    StoragePtr as = a.s_, bs = b.s_, os = res.s_;
    set_backward(res, [as, bs, os, m, n, p]() {
        const auto& g = os->grad;
        if (as->requires_grad) {
            as->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < p; ++j) {
                        acc += g[i * p + j] * bs->values[k * p + j];
                    }
                    as->grad[i * n + k] += acc;
                }
            }
        }
        if (bs->requires_grad) {
            bs->ensure_grad();
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t j = 0; j < p; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        acc += as->values[i * n + k] * g[i * p + j];
                    }
                    bs->grad[k * p + j] += acc;
                }
            }
        }
    });
    return res;
}

Tensor Tape::ewise(const detail::EwiseSpec& spec, const Tensor& a, const Tensor& b) {
    const Bcast bc = broadcast_kind(spec.name, a.shape(), b.shape());
    const auto av = a.values();
    const auto bv = b.values();
    Shape out_shape;
    std::vector<double> out;
    if (bc == Bcast::none) {
        out_shape = a.shape();
        out.resize(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) {
            out[i] = spec.combine(av[i], bv[i]);
        }
    } else if (bc == Bcast::b_vec) {
        out_shape = a.shape();
        const std::size_t m = out_shape[0], n = out_shape[1];
        out.resize(m * n);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] = spec.combine(av[i * n + j], bv[j]);
            }
        }
    } else {
        out_shape = b.shape();
        const std::size_t m = out_shape[0], n = out_shape[1];
        out.resize(m * n);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] = spec.combine(av[j], bv[i * n + j]);
            }
        }
    }
    Tensor res = record(spec.name, std::move(out_shape), std::move(out), {a, b});
    StoragePtr as = a.s_, bs = b.s_, os = res.s_;
    const auto da = spec.da;
    const auto db = spec.db;
    set_backward(res, [as, bs, os, bc, da, db]() {
        const auto& g = os->grad;
        if (bc == Bcast::none) {
            if (as->requires_grad) {
                as->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    as->grad[i] += g[i] * da(as->values[i], bs->values[i]);
                }
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    bs->grad[i] += g[i] * db(as->values[i], bs->values[i]);
                }
            }
        } else if (bc == Bcast::b_vec) {
            const std::size_t m = as->shape[0], n = as->shape[1];
            if (as->requires_grad) {
                as->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        as->grad[i * n + j] +=
                            g[i * n + j] * da(as->values[i * n + j], bs->values[j]);
                    }
                }
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        bs->grad[j] += g[i * n + j] * db(as->values[i * n + j], bs->values[j]);
                    }
                }
            }
        } else {
            const std::size_t m = bs->shape[0], n = bs->shape[1];
            if (as->requires_grad) {
                as->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        as->grad[j] += g[i * n + j] * da(as->values[j], bs->values[i * n + j]);
                    }
                }
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        bs->grad[i * n + j] +=
                            g[i * n + j] * db(as->values[j], bs->values[i * n + j]);
                    }
                }
            }
        }
    });
    return res;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    static const detail::EwiseSpec spec{"add", [](double x, double y) { return x + y; },
                                        [](double, double) { return 1.0; },
                                        [](double, double) { return 1.0; }};
    return ewise(spec, a, b);
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    static const detail::EwiseSpec spec{"sub", [](double x, double y) { return x - y; },
                                        [](double, double) { return 1.0; },
                                        [](double, double) { return -1.0; }};
    return ewise(spec, a, b);
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    static const detail::EwiseSpec spec{"mul", [](double x, double y) { return x * y; },
                                        [](double, double y) { return y; },
                                        [](double x, double) { return x; }};
    return ewise(spec, a, b);
}

Tensor Tape::activation(Activation kind, const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    const char* name = "relu";
    switch (kind) {
        case Activation::sigmoid:
            name = "sigmoid";
            for (std::size_t i = 0; i < av.size(); ++i) {
                out[i] = 1.0 / (1.0 + std::exp(-av[i]));
            }
            break;
        case Activation::tanh:
            name = "tanh";
            for (std::size_t i = 0; i < av.size(); ++i) {
                out[i] = std::tanh(av[i]);
            }
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < av.size(); ++i) {
                out[i] = av[i] > 0.0 ? av[i] : 0.0;
            }
            break;
    }
    Tensor res = record(name, a.shape(), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, kind]() {
        as->ensure_grad();
        const auto& g = os->grad;
        const auto& y = os->values;
        switch (kind) {
            case Activation::sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    as->grad[i] += g[i] * y[i] * (1.0 - y[i]);
                }
                break;
            case Activation::tanh:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    as->grad[i] += g[i] * (1.0 - y[i] * y[i]);
                }
                break;
            case Activation::relu:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    as->grad[i] += as->values[i] > 0.0 ? g[i] : 0.0;
                }
                break;
        }
    });
    return res;
}

Tensor Tape::softmax(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(a.shape()));
    }
    const auto av = a.values();
    std::vector<double> out(av.size());
    const bool rows = (a.rank() == 1) || axis == 1;
    const std::size_t nlines = a.rank() == 1 ? 1 : (rows ? a.shape()[0] : a.shape()[1]);
    const std::size_t len = a.rank() == 1 ? a.shape()[0] : (rows ? a.shape()[1] : a.shape()[0]);
    const std::size_t stride = (a.rank() == 2 && !rows) ? a.shape()[1] : 1;
    const std::size_t line_step = rows ? len : 1;
    for (std::size_t li = 0; li < nlines; ++li) {
        const std::size_t base = li * line_step;
        double mx = av[base];
        for (std::size_t i = 1; i < len; ++i) {
            mx = std::max(mx, av[base + i * stride]);
        }
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(av[base + i * stride] - mx);
            out[base + i * stride] = e;
            total += e;
        }
        for (std::size_t i = 0; i < len; ++i) {
            out[base + i * stride] /= total;
        }
    }
    Tensor res = record("softmax", a.shape(), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, nlines, len, stride, line_step]() {
        as->ensure_grad();
        const auto& g = os->grad;
        const auto& y = os->values;
        for (std::size_t li = 0; li < nlines; ++li) {
            const std::size_t base = li * line_step;
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                dot += g[base + i * stride] * y[base + i * stride];
            }
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t k = base + i * stride;
                as->grad[k] += y[k] * (g[k] - dot);
            }
        }
    });
    return res;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const std::size_t rank = parts[0].rank();
    if (axis >= rank) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    }
    for (const Tensor& p : parts) {
        if (p.rank() != rank) {
            throw DimensionError("concat: mixed ranks " + shape_str(parts[0].shape()) + " and " +
                                 shape_str(p.shape()));
        }
        for (std::size_t ax = 0; ax < rank; ++ax) {
            if (ax != axis && p.shape()[ax] != parts[0].shape()[ax]) {
                throw DimensionError("concat: off-axis extents differ, " +
                                     shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
            }
        }
    }
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        out_shape[axis] += p.shape()[axis];
    }
    std::vector<double> out;
    out.reserve(shape_numel(out_shape));
    const bool along_rows = (rank == 1 || axis == 0);
    if (along_rows) {
        for (const Tensor& p : parts) {
            const auto pv = p.values();
            out.insert(out.end(), pv.begin(), pv.end());
        }
    } else {
        const std::size_t m = out_shape[0];
        for (std::size_t i = 0; i < m; ++i) {
            for (const Tensor& p : parts) {
                const std::size_t w = p.shape()[1];
                const auto pv = p.values();
                out.insert(out.end(), pv.begin() + i * w, pv.begin() + (i + 1) * w);
            }
        }
    }
    Tensor res = record("concat", std::move(out_shape), std::move(out), parts);
    std::vector<StoragePtr> srcs;
    srcs.reserve(parts.size());
    for (const Tensor& p : parts) {
        srcs.push_back(p.s_);
    }
    StoragePtr os = res.s_;
    set_backward(res, [srcs, os, along_rows]() {
        const auto& g = os->grad;
        if (along_rows) {
            std::size_t off = 0;
            for (const auto& s : srcs) {
                const std::size_t n = s->values.size();
                if (s->requires_grad) {
                    s->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) {
                        s->grad[i] += g[off + i];
                    }
                }
                off += n;
            }
        } else {
            const std::size_t m = os->shape[0];
            const std::size_t total_w = os->shape[1];
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t off = 0;
                for (const auto& s : srcs) {
                    const std::size_t w = s->shape[1];
                    if (s->requires_grad) {
                        s->ensure_grad();
                        for (std::size_t j = 0; j < w; ++j) {
                            s->grad[i * w + j] += g[i * total_w + off + j];
                        }
                    }
                    off += w;
                }
            }
        }
    });
    return res;
}

MaxPoolResult Tape::max_pool(const Tensor& a, const std::vector<std::uint8_t>* row_mask) {
    if (a.rank() != 2) {
        throw DimensionError("max_pool: expected a rank-2 tensor, got " + shape_str(a.shape()));
    }
    const std::size_t l = a.shape()[0], d = a.shape()[1];
    if (row_mask && row_mask->size() != l) {
        throw DimensionError("max_pool: mask length " + std::to_string(row_mask->size()) +
                             " does not match " + std::to_string(l) + " rows");
    }
    const auto av = a.values();
    std::vector<double> out(d);
    std::vector<std::size_t> argmax(d);
    bool seeded = false;
    for (std::size_t i = 0; i < l; ++i) {
        if (row_mask && !(*row_mask)[i]) {
            continue;
        }
        if (!seeded) {
            for (std::size_t j = 0; j < d; ++j) {
                out[j] = av[i * d + j];
                argmax[j] = i;
            }
            seeded = true;
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (av[i * d + j] > out[j]) {
                out[j] = av[i * d + j];
                argmax[j] = i;
            }
        }
    }
    if (!seeded) {
        throw DomainError("max_pool: no unmasked rows to pool");
    }
    Tensor values = record("max_pool", {d}, std::move(out), {a});
    StoragePtr as = a.s_, os = values.s_;
    auto am = argmax;
    set_backward(values, [as, os, am, d]() {
        as->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) {
            as->grad[am[j] * d + j] += os->grad[j];
        }
    });
    return MaxPoolResult{std::move(values), std::move(argmax)};
}

Tensor Tape::gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
    if (table.rank() != 2) {
        throw DimensionError("gather_rows: expected a rank-2 table, got " +
                             shape_str(table.shape()));
    }
    const std::size_t v = table.shape()[0], d = table.shape()[1];
    if (rows.empty()) {
        throw DimensionError("gather_rows: no rows requested");
    }
    std::vector<double> out;
    out.reserve(rows.size() * d);
    const auto tv = table.values();
    for (const std::size_t r : rows) {
        if (r >= v) {
            throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range " +
                                 std::to_string(v));
        }
        out.insert(out.end(), tv.begin() + r * d, tv.begin() + (r + 1) * d);
    }
    Tensor res = record("gather_rows", {rows.size(), d}, std::move(out), {table});
    StoragePtr ts = table.s_, os = res.s_;
    auto idx = rows;
    set_backward(res, [ts, os, idx, d]() {
        ts->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                ts->grad[idx[i] * d + j] += os->grad[i * d + j];
            }
        }
    });
    return res;
}

Tensor Tape::transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose: expected a rank-2 tensor, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    const auto av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = av[i * n + j];
        }
    }
    Tensor res = record("transpose", {n, m}, std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, m, n]() {
        as->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                as->grad[i * n + j] += os->grad[j * m + i];
            }
        }
    });
    return res;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " +
                             shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    Tensor res = record("reshape", std::move(shape), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os]() {
        as->ensure_grad();
        for (std::size_t i = 0; i < os->grad.size(); ++i) {
            as->grad[i] += os->grad[i];
        }
    });
    return res;
}

Tensor Tape::scale(const Tensor& a, double c) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * c;
    }
    Tensor res = record("scale", a.shape(), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, c]() {
        as->ensure_grad();
        for (std::size_t i = 0; i < os->grad.size(); ++i) {
            as->grad[i] += c * os->grad[i];
        }
    });
    return res;
}

Tensor Tape::sum(const Tensor& a) {
    double total = 0.0;
    for (const double v : a.values()) {
        total += v;
    }
    Tensor res = record("sum", {1}, {total}, {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os]() {
        as->ensure_grad();
        const double g = os->grad[0];
        for (double& gv : as->grad) {
            gv += g;
        }
    });
    return res;
}

Tensor Tape::log(const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = std::log(av[i]);
    }
    Tensor res = record("log", a.shape(), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os]() {
        as->ensure_grad();
        for (std::size_t i = 0; i < os->grad.size(); ++i) {
            as->grad[i] += os->grad[i] / as->values[i];
        }
    });
    return res;
}

Tensor Tape::clamp_min(const Tensor& a, double floor) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] < floor ? floor : av[i];
    }
    Tensor res = record("clamp_min", a.shape(), std::move(out), {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, floor]() {
        as->ensure_grad();
        for (std::size_t i = 0; i < os->grad.size(); ++i) {
            if (as->values[i] > floor) {
                as->grad[i] += os->grad[i];
            }
        }
    });
    return res;
}

Tensor Tape::element(const Tensor& a, std::size_t flat_index) {
    if (flat_index >= a.numel()) {
        throw ContractError("element: index " + std::to_string(flat_index) + " out of range " +
                            std::to_string(a.numel()));
    }
    Tensor res = record("element", {1}, {a.values()[flat_index]}, {a});
    StoragePtr as = a.s_, os = res.s_;
    set_backward(res, [as, os, flat_index]() {
        as->ensure_grad();
        as->grad[flat_index] += os->grad[0];
    });
    return res;
}

double grad_check(const std::function<Tensor(Tape&)>& f, std::span<const Tensor> params,
                  double eps, std::size_t samples_per_param, std::uint64_t seed) {
    for (const Tensor& p : params) {
        p.s_->ensure_grad();
        std::fill(p.s_->grad.begin(), p.s_->grad.end(), 0.0);
    }
    {
        Tape tape(true);
        Tensor loss = f(tape);
        tape.backward(loss);
    }
    Rng rng(seed);
    double max_rel = 0.0;
    for (const Tensor& p : params) {
        const std::size_t n = p.numel();
        std::vector<std::size_t> coords;
        if (n <= samples_per_param) {
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), std::size_t{0});
        } else {
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            coords.reserve(samples_per_param);
            for (std::size_t i = 0; i < samples_per_param; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
                std::swap(all[i], all[j]);
                coords.push_back(all[i]);
            }
        }
        for (const std::size_t c : coords) {
            const double analytic = p.s_->grad[c];
            const double orig = p.s_->values[c];
            p.s_->values[c] = orig + eps;
            double fp;
            {
                Tape t(false);
                fp = f(t).item();
            }
            p.s_->values[c] = orig - eps;
            double fm;
            {
                Tape t(false);
                fm = f(t).item();
            }
            p.s_->values[c] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(analytic - numeric) /
                               std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace aifn
