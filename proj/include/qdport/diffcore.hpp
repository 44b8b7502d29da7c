#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape records every primitive in creation order, which is a valid topological order, so
// backward() is a single reverse sweep. The primitive set is closed: exactly what the
// generator and the tracking/diversity objective need.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace qdport {

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

class Tape {
public:
    using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;

    Var constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }
    Var variable(Tensor value) { return push("variable", std::move(value), {}, nullptr, true); }

    /// Adds a primitive result. Rejects non-finite values with the primitive's name.
    Var record(const char* op, Tensor value, std::vector<std::size_t> parents, Backprop backprop) {
        for (double v : value.data)
            if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite value");
        bool needs = false;
        for (auto p : parents) needs = needs || nodes_[p].requires_grad;
        return push(op, std::move(value), std::move(parents), needs ? std::move(backprop) : nullptr, needs);
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Accumulated gradient after backward(); zeros for nodes the root does not depend on.
    Tensor grad(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.grad.size() == n.value.size() ? n.grad : Tensor(n.value.shape);
    }

    /// Gradient buffer a backward rule accumulates into, or nullptr for constant subgraphs.
    Tensor* sink(std::size_t id) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape);
        return &n.grad;
    }

    void backward(Var root) {
        if (root.tape != this) throw ConfigError("backward: root belongs to another tape");
        if (value(root).size() != 1) throw ConfigError("backward: root must be scalar, got " + shape_str(value(root).shape));
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape, 1.0);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backprop && n.grad.size() == n.value.size()) n.backprop(*this, n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    /// Smallest gap between the two largest entries seen by any max primitive on this tape.
    double min_max_gap() const { return min_max_gap_; }
    void note_max_gap(double gap) { min_max_gap_ = std::min(min_max_gap_, gap); }

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        Backprop backprop;
        bool requires_grad;
    };

    Var push(const char* op, Tensor value, std::vector<std::size_t> parents, Backprop bp, bool rg) {
        nodes_.push_back(Node{op, std::move(value), Tensor(), std::move(parents), std::move(bp), rg});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    double min_max_gap_ = std::numeric_limits<double>::infinity();
};

namespace ad {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw DataError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

inline void require_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2) throw DataError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape));
}

} // namespace detail

/// Elementwise map with derivative expressed through input and output values.
template <typename Fwd, typename Deriv>
Var elementwise(const char* op, Var x, Fwd fwd, Deriv deriv) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    const std::size_t xi = x.id;
    auto holder = std::make_shared<std::size_t>(0);
    Var y = t.record(op, std::move(out), {xi}, [xi, holder, deriv](Tape& tp, const Tensor& g) {
        Tensor* gx = tp.sink(xi);
        if (!gx) return;
        const Tensor& xv2 = tp.value(xi);
        const Tensor& yv = tp.value(*holder);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv(xv2[i], yv[i]);
    });
    *holder = y.id;
    return y;
}

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    detail::require_same_shape("add", t.value(a), t.value(b));
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const auto ai = a.id, bi = b.id;
    return t.record("add", std::move(out), {ai, bi}, [ai, bi](Tape& tp, const Tensor& g) {
        for (auto id : {ai, bi})
            if (Tensor* s = tp.sink(id))
                for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    detail::require_same_shape("sub", t.value(a), t.value(b));
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const auto ai = a.id, bi = b.id;
    return t.record("sub", std::move(out), {ai, bi}, [ai, bi](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
        if (Tensor* s = tp.sink(bi))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] -= g[i];
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    detail::require_same_shape("mul", t.value(a), t.value(b));
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const auto ai = a.id, bi = b.id;
    return t.record("mul", std::move(out), {ai, bi}, [ai, bi](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(ai);
        const Tensor& bv2 = tp.value(bi);
        if (Tensor* s = tp.sink(ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * bv2[i];
        if (Tensor* s = tp.sink(bi))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * av[i];
    });
}

inline Var add_scalar(Var a, double c) {
    return elementwise("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var mul_scalar(Var a, double c) {
    return elementwise("mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

inline Var tanh(Var a) {
    return elementwise("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
    return elementwise(
        "sigmoid", a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
    return elementwise("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    return elementwise("ln", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
    return elementwise("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a) {
    return elementwise("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (double v : av.data) s += v;
    const auto ai = a.id;
    return t.record("sum", Tensor::scalar(s), {ai}, [ai](Tape& tp, const Tensor& g) {
        if (Tensor* s2 = tp.sink(ai))
            for (double& v : s2->data) v += g[0];
    });
}

inline Var mean(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.size() == 0) throw DataError("mean: empty tensor");
    double s = 0.0;
    for (double v : av.data) s += v;
    const double n = static_cast<double>(av.size());
    const auto ai = a.id;
    return t.record("mean", Tensor::scalar(s / n), {ai}, [ai, n](Tape& tp, const Tensor& g) {
        if (Tensor* s2 = tp.sink(ai))
            for (double& v : s2->data) v += g[0] / n;
    });
}

/// a (M×K) · b (K×N), or a · bᵀ when b is stored N×K.
inline Var matmul(Var a, Var b, bool transpose_b = false) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::require_matrix("matmul", av);
    detail::require_matrix("matmul", bv);
    const std::size_t m = av.shape[0], k = av.shape[1];
    const std::size_t bk = transpose_b ? bv.shape[1] : bv.shape[0];
    const std::size_t n = transpose_b ? bv.shape[0] : bv.shape[1];
    if (bk != k)
        throw DataError("matmul: inner dimension mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape) +
                        (transpose_b ? " (transposed)" : ""));
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = av.data.data() + i * k;
        double* orow = out.data.data() + i * n;
        if (transpose_b) {
            for (std::size_t j = 0; j < n; ++j) {
                const double* br = bv.data.data() + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
                orow[j] = s;
            }
        } else {
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = ar[p];
                const double* br = bv.data.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * br[j];
            }
        }
    }
    const auto ai = a.id, bi = b.id;
    return t.record("matmul", std::move(out), {ai, bi}, [ai, bi, m, k, n, transpose_b](Tape& tp, const Tensor& g) {
        const Tensor& av2 = tp.value(ai);
        const Tensor& bv2 = tp.value(bi);
        if (Tensor* ga = tp.sink(ai)) {
            // dA = G · Bᵀ (or G · B when b was used transposed)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        (*ga)[i * k + p] += gij * (transpose_b ? bv2[j * k + p] : bv2[p * n + j]);
                }
        }
        if (Tensor* gb = tp.sink(bi)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) {
                        if (transpose_b)
                            (*gb)[j * k + p] += gij * av2[i * k + p];
                        else
                            (*gb)[p * n + j] += gij * av2[i * k + p];
                    }
                }
        }
    });
}

/// a (B×M) + bias (M) broadcast over rows.
inline Var add_bias(Var a, Var bias) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(bias);
    detail::require_matrix("add_bias", av);
    if (bv.size() != av.cols())
        throw DataError("add_bias: bias " + shape_str(bv.shape) + " vs matrix " + shape_str(av.shape));
    Tensor out = av;
    const std::size_t rows = av.rows(), cols = av.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out(r, c) += bv[c];
    const auto ai = a.id, bi = bias.id;
    return t.record("add_bias", std::move(out), {ai, bi}, [ai, bi, rows, cols](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
        if (Tensor* s = tp.sink(bi))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) (*s)[c] += g[r * cols + c];
    });
}

/// Row sums of a B×N matrix, shape {B}.
inline Var sum_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    detail::require_matrix("sum_rows", av);
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r] += av(r, c);
    const auto ai = a.id;
    return t.record("sum_rows", std::move(out), {ai}, [ai, rows, cols](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) (*s)[r * cols + c] += g[r];
    });
}

/// Divides each row r of a B×N matrix by s[r].
inline Var div_rows(Var a, Var s) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& sv = t.value(s);
    detail::require_matrix("div_rows", av);
    if (sv.size() != av.rows())
        throw DataError("div_rows: divisor " + shape_str(sv.shape) + " vs matrix " + shape_str(av.shape));
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out(r, c) /= sv[r];
    const auto ai = a.id, si = s.id;
    return t.record("div_rows", std::move(out), {ai, si}, [ai, si, rows, cols](Tape& tp, const Tensor& g) {
        const Tensor& av2 = tp.value(ai);
        const Tensor& sv2 = tp.value(si);
        if (Tensor* ga = tp.sink(ai))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r * cols + c] / sv2[r];
        if (Tensor* gs = tp.sink(si))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    (*gs)[r] -= g[r * cols + c] * av2[r * cols + c] / (sv2[r] * sv2[r]);
    });
}

/// Flattened concatenation, shape {Σ sizes}.
inline Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw DataError("concat: no inputs");
    Tape& t = *parts[0].tape;
    std::vector<double> out;
    std::vector<std::size_t> ids, offsets;
    for (const Var& p : parts) {
        offsets.push_back(out.size());
        ids.push_back(p.id);
        const Tensor& v = t.value(p);
        out.insert(out.end(), v.data.begin(), v.data.end());
    }
    auto ids_copy = ids;
    return t.record("concat", Tensor::vector(std::move(out)), std::move(ids_copy),
                    [ids, offsets](Tape& tp, const Tensor& g) {
                        for (std::size_t k = 0; k < ids.size(); ++k)
                            if (Tensor* s = tp.sink(ids[k]))
                                for (std::size_t i = 0; i < s->size(); ++i) (*s)[i] += g[offsets[k] + i];
                    });
}

/// Contiguous slice of a matrix along axis 0 (rows) or 1 (columns); for a vector, axis 0.
inline Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() == 1) {
        if (axis != 0 || start + length > av.size()) throw DataError("slice: out of range on " + shape_str(av.shape));
        std::vector<double> out(av.data.begin() + start, av.data.begin() + start + length);
        const auto ai = a.id;
        return t.record("slice", Tensor::vector(std::move(out)), {ai}, [ai, start](Tape& tp, const Tensor& g) {
            if (Tensor* s = tp.sink(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*s)[start + i] += g[i];
        });
    }
    detail::require_matrix("slice", av);
    const std::size_t rows = av.rows(), cols = av.cols();
    if (axis > 1 || start + length > av.shape[axis])
        throw DataError("slice: out of range on " + shape_str(av.shape));
    const std::size_t orows = axis == 0 ? length : rows;
    const std::size_t ocols = axis == 1 ? length : cols;
    const std::size_t r0 = axis == 0 ? start : 0, c0 = axis == 1 ? start : 0;
    Tensor out = Tensor::matrix(orows, ocols);
    for (std::size_t r = 0; r < orows; ++r)
        for (std::size_t c = 0; c < ocols; ++c) out(r, c) = av(r0 + r, c0 + c);
    const auto ai = a.id;
    return t.record("slice", std::move(out), {ai}, [ai, orows, ocols, r0, c0, cols](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai))
            for (std::size_t r = 0; r < orows; ++r)
                for (std::size_t c = 0; c < ocols; ++c) (*s)[(r0 + r) * cols + c0 + c] += g[r * ocols + c];
    });
}

inline Var reshape(Var a, Shape shape) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (shape_size(shape) != av.size())
        throw DataError("reshape: " + shape_str(av.shape) + " cannot become " + shape_str(shape));
    Tensor out(std::move(shape), av.data);
    const auto ai = a.id;
    return t.record("reshape", std::move(out), {ai}, [ai](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    });
}

/// Valid-mode 1-D cross-correlation of each row of x (B×d) with C kernels of width k,
/// plus per-channel bias. Output B×(C·L), L = d−k+1, channel-major within a row.
inline Var conv1d_valid(Var x, Var kernel, Var bias) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernel);
    const Tensor& bv = t.value(bias);
    if (xv.rank() != 1 && xv.rank() != 2) throw DataError("conv1d: input must be a vector or matrix");
    if (kv.rank() < 1) throw DataError("conv1d: kernel must have rank >= 1");
    const std::size_t channels = kv.rank() == 1 ? 1 : kv.shape[0];
    const std::size_t width = kv.shape.back();
    if (kv.size() != channels * width) throw DataError("conv1d: kernel must be C x k (optionally C x 1 x k)");
    if (bv.size() != channels) throw DataError("conv1d: bias size must equal channel count");
    const std::size_t batch = xv.rows(), d = xv.cols();
    if (width == 0 || width > d) throw DataError("conv1d: kernel wider than input");
    const std::size_t len = d - width + 1;
    Tensor out = xv.rank() == 1 ? Tensor(Shape{channels * len}) : Tensor::matrix(batch, channels * len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t l = 0; l < len; ++l) {
                double s = bv[c];
                for (std::size_t j = 0; j < width; ++j) s += xv[b * d + l + j] * kv[c * width + j];
                out[b * channels * len + c * len + l] = s;
            }
    const auto xi = x.id, ki = kernel.id, bi = bias.id;
    return t.record("conv1d_valid", std::move(out), {xi, ki, bi},
                    [xi, ki, bi, batch, d, channels, width, len](Tape& tp, const Tensor& g) {
                        const Tensor& xv2 = tp.value(xi);
                        const Tensor& kv2 = tp.value(ki);
                        Tensor* gx = tp.sink(xi);
                        Tensor* gk = tp.sink(ki);
                        Tensor* gb = tp.sink(bi);
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t c = 0; c < channels; ++c)
                                for (std::size_t l = 0; l < len; ++l) {
                                    const double go = g[b * channels * len + c * len + l];
                                    if (gb) (*gb)[c] += go;
                                    for (std::size_t j = 0; j < width; ++j) {
                                        if (gx) (*gx)[b * d + l + j] += go * kv2[c * width + j];
                                        if (gk) (*gk)[c * width + j] += go * xv2[b * d + l + j];
                                    }
                                }
                    });
}

/// Softmax along the last axis (each row of a matrix, or the whole vector).
inline Var softmax(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 1 && av.rank() != 2) throw DataError("softmax: expected vector or matrix");
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(av.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = av.data.data() + r * cols;
        double* y = out.data.data() + r * cols;
        const double zmax = *std::max_element(z, z + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += (y[c] = std::exp(z[c] - zmax));
        for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
    }
    const auto ai = a.id;
    auto out_id = std::make_shared<std::size_t>(0);
    Var res = t.record("softmax", std::move(out), {ai}, [ai, out_id, rows, cols](Tape& tp, const Tensor& g) {
        Tensor* s = tp.sink(ai);
        if (!s) return;
        const Tensor& y = tp.value(*out_id);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) (*s)[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
    });
    *out_id = res.id;
    return res;
}

/// Variance below which a series is treated as constant by pearson().
inline constexpr double kCorrelationVarianceFloor = 1e-18;

/// Pearson correlation of two equal-length series (any shapes with equal element count).
/// Defined as 0, with zero gradient, when either series has variance below the floor.
inline Var pearson(Var x, Var y) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& yv = t.value(y);
    const std::size_t n = xv.size();
    if (yv.size() != n) throw DataError("pearson: length mismatch");
    if (n < 2) throw DataError("pearson: need at least 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xv[i];
        my += yv[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xv[i] - mx, dy = yv[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const double nn = static_cast<double>(n);
    const bool degenerate = sxx / nn < kCorrelationVarianceFloor || syy / nn < kCorrelationVarianceFloor;
    const double r = degenerate ? 0.0 : std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const auto xi = x.id, yi = y.id;
    return t.record("pearson", Tensor::scalar(r), {xi, yi},
                    [xi, yi, n, mx, my, sxx, syy, r, degenerate](Tape& tp, const Tensor& g) {
                        if (degenerate) return;
                        const Tensor& xv2 = tp.value(xi);
                        const Tensor& yv2 = tp.value(yi);
                        const double denom = std::sqrt(sxx * syy);
                        if (Tensor* gx = tp.sink(xi))
                            for (std::size_t i = 0; i < n; ++i)
                                (*gx)[i] += g[0] * ((yv2[i] - my) / denom - r * (xv2[i] - mx) / sxx);
                        if (Tensor* gy = tp.sink(yi))
                            for (std::size_t i = 0; i < n; ++i)
                                (*gy)[i] += g[0] * ((xv2[i] - mx) / denom - r * (yv2[i] - my) / syy);
                    });
}

/// Maximum entry of a tensor. The incoming gradient goes entirely to the argmax; exact ties
/// resolve to the lowest index. The gap to the runner-up is noted on the tape.
inline Var max(Var a, std::size_t* argmax_out = nullptr) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.size() == 0) throw DataError("max: empty tensor");
    std::size_t best = 0;
    for (std::size_t i = 1; i < av.size(); ++i)
        if (av[i] > av[best]) best = i;
    double runner = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < av.size(); ++i)
        if (i != best) runner = std::max(runner, av[i]);
    if (av.size() > 1) t.note_max_gap(av[best] - runner);
    if (argmax_out) *argmax_out = best;
    const auto ai = a.id;
    return t.record("max", Tensor::scalar(av[best]), {ai}, [ai, best](Tape& tp, const Tensor& g) {
        if (Tensor* s = tp.sink(ai)) (*s)[best] += g[0];
    });
}

struct LstmOutput {
    Var h;
    Var c;
};

/// One LSTM step. Gate rows of the weight matrices are ordered input, forget, cell, output.
/// x: B×F, h/c: B×H, w_input: 4H×F, w_recurrent: 4H×H, bias: 4H.
inline LstmOutput lstm_cell(Var x, Var h, Var c, Var w_input, Var w_recurrent, Var bias) {
    Tape& t = *x.tape;
    const std::size_t hidden = t.value(h).cols();
    if (t.value(w_input).rows() != 4 * hidden || t.value(w_recurrent).rows() != 4 * hidden)
        throw DataError("lstm_cell: gate weights must have 4H rows");
    Var gates = add_bias(add(matmul(x, w_input, true), matmul(h, w_recurrent, true)), bias);
    Var i = sigmoid(slice(gates, 1, 0, hidden));
    Var f = sigmoid(slice(gates, 1, hidden, hidden));
    Var g = tanh(slice(gates, 1, 2 * hidden, hidden));
    Var o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    Var c_next = add(mul(f, c), mul(i, g));
    Var h_next = mul(o, tanh(c_next));
    return {h_next, c_next};
}

} // namespace ad

/// Builds a scalar graph from variables bound to the supplied points.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients against central differences at `points`.
/// Error per coordinate is |analytic − numeric| / max(1, |analytic|). Rejects points where a
/// max primitive's top-two gap is within `tie_tolerance` (the subgradient is not a derivative
/// there and a perturbation can switch the argmax).
inline GradCheckResult grad_check(const GraphBuilder& f, std::vector<Tensor> points, double h = 1e-6,
                                  double tie_tolerance = -1.0) {
    if (tie_tolerance < 0) tie_tolerance = 10.0 * h;
    auto evaluate = [&](const std::vector<Tensor>& at, bool with_backward, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& p : at) vars.push_back(tape.variable(p));
        Var root = f(tape, vars);
        if (tape.value(root).size() != 1) throw ConfigError("grad_check: builder must return a scalar");
        if (tape.min_max_gap() <= tie_tolerance)
            throw NumericalError("grad_check: tie in max input (gap " + std::to_string(tape.min_max_gap()) + ")");
        const double v = tape.value(root)[0];
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value");
        if (with_backward) {
            tape.backward(root);
            for (const Var& var : vars) grads->push_back(tape.grad(var));
        }
        return v;
    };
    std::vector<Tensor> analytic;
    evaluate(points, true, &analytic);
    GradCheckResult res;
    for (std::size_t p = 0; p < points.size(); ++p) {
        for (std::size_t i = 0; i < points[p].size(); ++i) {
            const double orig = points[p][i];
            points[p][i] = orig + h;
            const double fp = evaluate(points, false, nullptr);
            points[p][i] = orig - h;
            const double fm = evaluate(points, false, nullptr);
            points[p][i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[p][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (err > res.max_rel_error) res = {err, p, i};
        }
    }
    return res;
}

inline GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& point, double h = 1e-6,
                                  double tie_tolerance = -1.0) {
    return grad_check([&](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor>{point}, h,
                      tie_tolerance);
}

} // namespace qdport
