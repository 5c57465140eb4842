#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aifn/errors.hpp"

namespace aifn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorStorage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized lazily, same length as values once present
    bool requires_grad = false;
    std::uint64_t tape_stamp = 0;  // which tape last assigned node_id
    int node_id = -1;

    std::size_t numel() const { return values.size(); }
    void ensure_grad() {
        if (grad.size() != values.size()) {
            grad.assign(values.size(), 0.0);
        }
    }
};

struct EwiseSpec;  // value/derivative table for one elementwise binary

}  // namespace detail

// Dense double-precision tensor. A cheap handle: copies share storage.
// Rank 1 and 2 cover everything the model needs; a scalar is shape {1}.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t numel() const { return s_->numel(); }
    std::size_t extent(std::size_t axis) const { return s_->shape[axis]; }
    bool requires_grad() const { return s_->requires_grad; }
    int node_id() const { return s_->node_id; }

    std::span<const double> values() const { return s_->values; }
    // Mutable view for optimizer updates and loaders; never call on a tensor
    // that is part of a live tape. Mutates the shared storage, so it is const
    // on the handle, like everything else here.
    std::span<double> values_mut() const { return s_->values; }
    std::span<const double> grad() const { return s_->grad; }
    void zero_grad() const {
        if (s_) {
            std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
        }
    }

    double item() const;
    double at(std::size_t i) const { return s_->values[i]; }
    double at(std::size_t i, std::size_t j) const { return s_->values[i * s_->shape[1] + j]; }

private:
    std::shared_ptr<detail::TensorStorage> s_;
    friend class Tape;
    friend double grad_check(const std::function<Tensor(class Tape&)>&,
                             std::span<const Tensor>, double, std::size_t, std::uint64_t);
    explicit Tensor(std::shared_ptr<detail::TensorStorage> s) : s_(std::move(s)) {}
};

enum class Activation { sigmoid, tanh, relu };

struct MaxPoolResult {
    Tensor values;                    // [d]
    std::vector<std::size_t> argmax;  // row index per pooled column, lowest on ties
};

// Record-on-execute tape. Operations compute values immediately and append a
// backward rule; node order is therefore already topological. One tape per
// forward pass, confined to one worker.
class Tape {
public:
    explicit Tape(bool grad_enabled = true);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor activation(Activation kind, const Tensor& a);
    Tensor sigmoid(const Tensor& a) { return activation(Activation::sigmoid, a); }
    Tensor tanh(const Tensor& a) { return activation(Activation::tanh, a); }
    Tensor relu(const Tensor& a) { return activation(Activation::relu, a); }
    Tensor softmax(const Tensor& a, std::size_t axis);
    Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
    // Max over rows of [l x d]; rows with mask==0 are skipped. Null mask keeps
    // every row. No candidate row at all is a domain error.
    MaxPoolResult max_pool(const Tensor& a, const std::vector<std::uint8_t>* row_mask = nullptr);
    // Rows gathered from a [V x d] table; backward scatter-adds into the table.
    Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows);
    Tensor transpose(const Tensor& a);
    Tensor reshape(const Tensor& a, Shape shape);
    Tensor scale(const Tensor& a, double c);
    Tensor sum(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor clamp_min(const Tensor& a, double floor);
    Tensor element(const Tensor& a, std::size_t flat_index);

    // Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
    // interior gradients are reset at the start of each call.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }
    // Every node's inputs were recorded before the node itself.
    bool topologically_ordered() const;

private:
    struct Node {
        std::function<void()> backward;  // null for leaves
        std::shared_ptr<detail::TensorStorage> out;
        std::vector<int> inputs;
        const char* op;
    };

    bool grad_enabled_;
    std::uint64_t stamp_;
    std::vector<Node> nodes_;

    int register_leaf(const Tensor& t);
    Tensor record(const char* op, Shape shape, std::vector<double> values,
                  const std::vector<Tensor>& inputs);
    void set_backward(const Tensor& out, std::function<void()> fn);
    Tensor ewise(const detail::EwiseSpec& spec, const Tensor& a, const Tensor& b);
};

// Max relative error between analytic gradients of f and central finite
// differences, over up to samples_per_param coordinates of each parameter.
// f must be deterministic; it is re-run on fresh tapes for each probe.
double grad_check(const std::function<Tensor(Tape&)>& f, std::span<const Tensor> params,
                  double eps, std::size_t samples_per_param, std::uint64_t seed);

}  // namespace aifn
