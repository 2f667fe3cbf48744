#include "trfs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace trfs {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

void apply_precision(std::vector<double>& v, Precision p) {
    if (p == Precision::Fast) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data,
               Precision prec)
    : shape_(std::move(shape)), prec_(prec) {
    if (data.size() != shape_product(shape_))
        throw ShapeMismatch("Tensor: data length does not match shape");
    for (std::size_t e : shape_)
        if (e == 0) throw ShapeMismatch("Tensor: zero extent");
    apply_precision(data, prec_);
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Precision prec) {
    std::vector<double> d(shape_product(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), prec);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, Precision prec) {
    std::vector<double> d(shape_product(shape), value);
    return Tensor(std::move(shape), std::move(d), prec);
}

Tensor Tensor::scalar(double value, Precision prec) {
    return Tensor({1}, {value}, prec);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeMismatch("item(): tensor is not scalar");
    return (*data_)[0];
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_product(new_shape) != size())
        throw ShapeMismatch("reshaped(): element count changed");
    Tensor out = *this;
    out.shape_ = std::move(new_shape);
    return out;
}

Tensor Tensor::detached() const {
    Tensor out = *this;
    out.tape_ = nullptr;
    out.node_ = -1;
    return out;
}

// --- tape -------------------------------------------------------------------

void GradientTape::watch(Tensor& t) {
    int id = record({}, t.size(), nullptr);
    t.set_tape(this, id);
}

int GradientTape::record(const std::vector<int>& input_nodes,
                         std::size_t value_size, BackwardFn backward) {
    nodes_.push_back(Node{input_nodes, value_size, std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
}

void GradientTape::backward(const Tensor& root) {
    if (root.size() != 1) throw NotScalarRoot("backward: root is not a scalar");
    if (root.tape() != this || root.node() < 0)
        throw DetachedRoot("backward: root is not on this tape");

    grads_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        grads_[i].assign(nodes_[i].value_size, 0.0);
    grads_[static_cast<std::size_t>(root.node())][0] = 1.0;

    for (int i = root.node(); i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward) continue;
        std::vector<std::vector<double>*> grad_inputs;
        grad_inputs.reserve(n.inputs.size());
        for (int in : n.inputs)
            grad_inputs.push_back(&grads_[static_cast<std::size_t>(in)]);
        n.backward(grads_[static_cast<std::size_t>(i)], grad_inputs);
    }
}

const std::vector<double>& GradientTape::grad(const Tensor& t) const {
    if (t.tape() != this || t.node() < 0)
        throw DetachedRoot("grad: tensor is not on this tape");
    return grads_.at(static_cast<std::size_t>(t.node()));
}

bool GradientTape::has_grad(const Tensor& t) const {
    return t.tape() == this && t.node() >= 0 &&
           static_cast<std::size_t>(t.node()) < grads_.size();
}

// --- op helpers ---------------------------------------------------------------

namespace {

GradientTape* common_tape(std::initializer_list<const Tensor*> ts) {
    GradientTape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (t->on_tape()) {
            if (tape && tape != t->tape())
                throw TrfsError("op inputs live on different tapes");
            tape = t->tape();
        }
    }
    return tape;
}

Precision common_precision(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->precision() == Precision::Fast) return Precision::Fast;
    return Precision::Reference;
}

} // namespace

namespace detail {

Tensor finish_op(std::vector<std::size_t> shape, std::vector<double> data,
                 std::initializer_list<const Tensor*> inputs,
                 const GradientTape::BackwardFn& backward) {
    Precision prec = common_precision(inputs);
    Tensor out(std::move(shape), std::move(data), prec);
    GradientTape* tape = common_tape(inputs);
    if (tape && backward) {
        std::vector<int> nodes;
        std::vector<bool> taped;
        for (const Tensor* t : inputs) {
            taped.push_back(t->on_tape());
            if (t->on_tape()) nodes.push_back(t->node());
        }
        // Wrap so backward always sees one slot per declared input; untaped
        // inputs receive nullptr.
        auto wrapped = [backward, taped](const std::vector<double>& g,
                                         const std::vector<std::vector<double>*>& gi) {
            std::vector<std::vector<double>*> slots;
            std::size_t j = 0;
            for (bool on : taped) slots.push_back(on ? gi[j++] : nullptr);
            backward(g, slots);
        };
        int id = tape->record(nodes, out.size(), wrapped);
        out.set_tape(tape, id);
    }
    return out;
}

} // namespace detail

using detail::finish_op;

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(op) + ": shapes differ");
}
} // namespace

// --- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.at(i) + b.at(i);
    return finish_op(a.shape(), std::move(d), {&a, &b},
                     [](const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& gi) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             if (gi[0]) (*gi[0])[i] += g[i];
                             if (gi[1]) (*gi[1])[i] += g[i];
                         }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.at(i) - b.at(i);
    return finish_op(a.shape(), std::move(d), {&a, &b},
                     [](const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& gi) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             if (gi[0]) (*gi[0])[i] += g[i];
                             if (gi[1]) (*gi[1])[i] -= g[i];
                         }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.at(i) * b.at(i);
    auto da = a.shared_data();
    auto db = b.shared_data();
    return finish_op(a.shape(), std::move(d), {&a, &b},
                     [da, db](const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& gi) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             if (gi[0]) (*gi[0])[i] += g[i] * (*db)[i];
                             if (gi[1]) (*gi[1])[i] += g[i] * (*da)[i];
                         }
                     });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.at(i) * s;
    return finish_op(a.shape(), std::move(d), {&a},
                     [s](const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t i = 0; i < g.size(); ++i)
                             (*gi[0])[i] += g[i] * s;
                     });
}

// --- matmul / transpose --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeMismatch("matmul: inputs must be rank 2");
    const std::size_t m = a.extent(0), k = a.extent(1);
    const std::size_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2) throw ShapeMismatch("matmul: inner extents differ");

    std::vector<double> d(m * n, 0.0);
    const auto& A = a.data();
    const auto& B = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
                d[i * n + j] += av * B[p * n + j];
        }

    auto da = a.shared_data();
    auto db = b.shared_data();
    return finish_op({m, n}, std::move(d), {&a, &b},
                     [da, db, m, k, n](const std::vector<double>& g,
                                       const std::vector<std::vector<double>*>& gi) {
                         if (gi[0]) { // dA = G B^T
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < n; ++j)
                                         acc += g[i * n + j] * (*db)[p * n + j];
                                     (*gi[0])[i * k + p] += acc;
                                 }
                         }
                         if (gi[1]) { // dB = A^T G
                             for (std::size_t p = 0; p < k; ++p)
                                 for (std::size_t j = 0; j < n; ++j) {
                                     double acc = 0.0;
                                     for (std::size_t i = 0; i < m; ++i)
                                         acc += (*da)[i * k + p] * g[i * n + j];
                                     (*gi[1])[p * n + j] += acc;
                                 }
                         }
                     });
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeMismatch("transpose2d: rank must be 2");
    const std::size_t m = a.extent(0), n = a.extent(1);
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j * m + i] = a.at(i * n + j);
    return finish_op({n, m}, std::move(d), {&a},
                     [m, n](const std::vector<double>& g,
                            const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                                 (*gi[0])[i * n + j] += g[j * m + i];
                     });
}

// --- reductions / softmax -------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
    return finish_op({1}, {s}, {&a},
                     [](const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (double& x : *gi[0]) x += g[0];
                     });
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() == 0 || x.extent(x.rank() - 1) < 1)
        throw ShapeMismatch("softmax_lastdim: empty last extent");
    const std::size_t c = x.extent(x.rank() - 1);
    const std::size_t rows = x.size() / c;
    std::vector<double> d(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x.at(r * c);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(r * c + j));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            d[r * c + j] = std::exp(x.at(r * c + j) - mx);
            sum += d[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) d[r * c + j] /= sum;
    }
    // backward needs the (possibly precision-rounded) output values
    Tensor out = finish_op(x.shape(), std::move(d), {&x}, nullptr);
    auto y = out.shared_data();
    if (x.on_tape()) {
        GradientTape* tape = x.tape();
        int id = tape->record(
            {x.node()}, out.size(),
            [y, rows, c](const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& gi) {
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                        dot += g[r * c + j] * (*y)[r * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                        (*gi[0])[r * c + j] += (*y)[r * c + j] * (g[r * c + j] - dot);
                }
            });
        out.set_tape(tape, id);
    }
    return out;
}

// --- concat / slice -------------------------------------------------------------

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw EmptyInput("concat_lastdim: no parts");
    const Tensor& first = parts[0];
    const std::size_t rank = first.rank();
    std::size_t total_last = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank)
            throw ShapeMismatch("concat_lastdim: rank differs");
        for (std::size_t a = 0; a + 1 < rank; ++a)
            if (p.extent(a) != first.extent(a))
                throw ShapeMismatch("concat_lastdim: leading extents differ");
        total_last += p.extent(rank - 1);
    }
    std::vector<std::size_t> shape = first.shape();
    shape[rank - 1] = total_last;
    const std::size_t rows = shape_product(shape) / total_last;

    std::vector<double> d(rows * total_last);
    std::vector<std::size_t> lasts;
    for (const Tensor& p : parts) lasts.push_back(p.extent(rank - 1));
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const std::size_t c = lasts[pi];
            for (std::size_t j = 0; j < c; ++j)
                d[r * total_last + off + j] = parts[pi].at(r * c + j);
            off += c;
        }
    }

    Precision prec = Precision::Reference;
    GradientTape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (p.precision() == Precision::Fast) prec = Precision::Fast;
        if (p.on_tape()) {
            if (tape && tape != p.tape())
                throw TrfsError("concat_lastdim: inputs on different tapes");
            tape = p.tape();
        }
    }
    Tensor out(std::move(shape), std::move(d), prec);
    if (tape) {
        std::vector<int> nodes;
        std::vector<bool> taped;
        for (const Tensor& p : parts) {
            taped.push_back(p.on_tape());
            if (p.on_tape()) nodes.push_back(p.node());
        }
        int id = tape->record(
            nodes, out.size(),
            [lasts, taped, rows, total_last](const std::vector<double>& g,
                                             const std::vector<std::vector<double>*>& gi) {
                std::size_t off = 0, j = 0;
                for (std::size_t pi = 0; pi < lasts.size(); ++pi) {
                    const std::size_t c = lasts[pi];
                    if (taped[pi]) {
                        std::vector<double>* gp = gi[j++];
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t k = 0; k < c; ++k)
                                (*gp)[r * c + k] += g[r * total_last + off + k];
                    }
                    off += c;
                }
            });
        out.set_tape(tape, id);
    }
    return out;
}

Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t rank = x.rank();
    const std::size_t c = x.extent(rank - 1);
    if (start + len > c || len == 0)
        throw ShapeMismatch("slice_lastdim: out of range");
    std::vector<std::size_t> shape = x.shape();
    shape[rank - 1] = len;
    const std::size_t rows = x.size() / c;
    std::vector<double> d(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j)
            d[r * len + j] = x.at(r * c + start + j);
    return finish_op(std::move(shape), std::move(d), {&x},
                     [rows, c, start, len](const std::vector<double>& g,
                                           const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < len; ++j)
                                 (*gi[0])[r * c + start + j] += g[r * len + j];
                     });
}

// --- linear / broadcast -----------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || bias.rank() != 1)
        throw ShapeMismatch("linear: weight must be [out,in], bias [out]");
    const std::size_t out_c = weight.extent(0), in_c = weight.extent(1);
    if (bias.extent(0) != out_c) throw ShapeMismatch("linear: bias extent");
    if (x.extent(x.rank() - 1) != in_c)
        throw ShapeMismatch("linear: input channel extent");
    const std::size_t rows = x.size() / in_c;

    std::vector<double> d(rows * out_c);
    const auto& X = x.data();
    const auto& W = weight.data();
    const auto& B = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_c; ++o) {
            double acc = B[o];
            for (std::size_t i = 0; i < in_c; ++i)
                acc += X[r * in_c + i] * W[o * in_c + i];
            d[r * out_c + o] = acc;
        }

    std::vector<std::size_t> shape = x.shape();
    shape[shape.size() - 1] = out_c;
    auto dx = x.shared_data();
    auto dw = weight.shared_data();
    return finish_op(std::move(shape), std::move(d), {&x, &weight, &bias},
                     [dx, dw, rows, in_c, out_c](const std::vector<double>& g,
                                                 const std::vector<std::vector<double>*>& gi) {
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < out_c; ++o) {
                                 const double go = g[r * out_c + o];
                                 if (gi[2]) (*gi[2])[o] += go;
                                 for (std::size_t i = 0; i < in_c; ++i) {
                                     if (gi[0])
                                         (*gi[0])[r * in_c + i] += go * (*dw)[o * in_c + i];
                                     if (gi[1])
                                         (*gi[1])[o * in_c + i] += go * (*dx)[r * in_c + i];
                                 }
                             }
                     });
}

Tensor broadcast_to_map(const Tensor& v, std::size_t h, std::size_t w) {
    if (v.rank() != 1) throw ShapeMismatch("broadcast_to_map: rank must be 1");
    const std::size_t c = v.extent(0);
    std::vector<double> d(h * w * c);
    for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t j = 0; j < c; ++j) d[p * c + j] = v.at(j);
    return finish_op({h, w, c}, std::move(d), {&v},
                     [h, w, c](const std::vector<double>& g,
                               const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t p = 0; p < h * w; ++p)
                             for (std::size_t j = 0; j < c; ++j)
                                 (*gi[0])[j] += g[p * c + j];
                     });
}

// --- finite differences -------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double step) {
    GradientTape tape;
    Tensor xt = x.detached();
    tape.watch(xt);
    Tensor y = f(xt);
    tape.backward(y);
    const std::vector<double> analytic = tape.grad(xt);

    double max_err = 0.0;
    std::vector<double> base(x.data());
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += step;
        minus[i] -= step;
        const double fp = f(Tensor(x.shape(), plus)).item();
        const double fm = f(Tensor(x.shape(), minus)).item();
        const double numeric = (fp - fm) / (2.0 * step);
        if (std::abs(analytic[i]) < 1e-12 && std::abs(numeric) < 1e-12) continue;
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace trfs
