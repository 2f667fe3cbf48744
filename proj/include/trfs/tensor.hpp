#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "trfs/errors.hpp"

namespace trfs {

enum class Precision { Fast, Reference };

class GradientTape;

// Dense row-major tensor. Data is shared and treated as immutable: every op
// returns a new Tensor. A tensor may be linked to a node on a GradientTape.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data,
           Precision prec = Precision::Reference);

    static Tensor zeros(std::vector<std::size_t> shape,
                        Precision prec = Precision::Reference);
    static Tensor full(std::vector<std::size_t> shape, double value,
                       Precision prec = Precision::Reference);
    static Tensor scalar(double value, Precision prec = Precision::Reference);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    const std::vector<double>& data() const { return *data_; }
    double at(std::size_t flat) const { return (*data_)[flat]; }
    double item() const;

    Precision precision() const { return prec_; }

    GradientTape* tape() const { return tape_; }
    int node() const { return node_; }
    bool on_tape() const { return tape_ != nullptr; }

    // Tape link; used by op implementations and GradientTape::watch.
    void set_tape(GradientTape* tape, int node) {
        tape_ = tape;
        node_ = node;
    }

    // Shape metadata change over shared data; same element count required.
    Tensor reshaped(std::vector<std::size_t> new_shape) const;
    // Same values, no tape link.
    Tensor detached() const;

    std::shared_ptr<const std::vector<double>> shared_data() const { return data_; }

private:
    std::vector<std::size_t> shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Precision prec_ = Precision::Reference;
    GradientTape* tape_ = nullptr;
    int node_ = -1;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Round every element to f32 when the precision is Fast. All arithmetic runs
// at double width; Fast semantics are defined as rounding after each
// primitive, which keeps gradient checks exact in Reference and f32
// round trips bitwise in Fast.
void apply_precision(std::vector<double>& v, Precision p);

// Reverse-mode tape. Nodes are appended in execution order, so inputs always
// precede their consumers and the backward sweep is a single reverse pass.
class GradientTape {
public:
    using BackwardFn =
        std::function<void(const std::vector<double>& grad_out,
                           const std::vector<std::vector<double>*>& grad_inputs)>;

    // Register a leaf (parameter or input we differentiate against).
    void watch(Tensor& t);

    // Record an op producing `result` from `inputs` (tape-linked subset only).
    int record(const std::vector<int>& input_nodes, std::size_t value_size,
               BackwardFn backward);

    void backward(const Tensor& root);

    const std::vector<double>& grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> inputs;
        std::size_t value_size;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// --- primitive differentiable ops -----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor softmax_lastdim(const Tensor& x);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t len);
// y = x W^T + b with x [N..., in], W [out, in], b [out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// broadcast a length-C vector to an H x W x C map
Tensor broadcast_to_map(const Tensor& v, std::size_t h, std::size_t w);

namespace detail {
// Builds a result tensor from computed data and records `backward` on the
// common tape of the taped inputs. The backward closure always receives one
// gradient slot per declared input; untaped inputs get nullptr.
Tensor finish_op(std::vector<std::size_t> shape, std::vector<double> data,
                 std::initializer_list<const Tensor*> inputs,
                 const GradientTape::BackwardFn& backward);
} // namespace detail

// Central finite differences against the tape gradient; reference precision.
// f must build a scalar from its (tape-watched) argument using the ops above.
// Returns max over elements of |analytic - numeric| / max(1, |analytic|),
// skipping elements where both magnitudes are below 1e-12.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double step);

} // namespace trfs
