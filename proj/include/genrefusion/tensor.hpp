#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "genrefusion/errors.hpp"

namespace genrefusion {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor: shared handle to an n-dimensional float64 array, optionally carrying
// a gradient buffer and a link to the tape node that produced it.
// ---------------------------------------------------------------------------
class Tensor {
public:
    Tensor() : d_(std::make_shared<Data>()) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.d_->shape = std::move(shape);
        t.d_->v.assign(numel(t.d_->shape), 0.0);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor constant(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.d_->v.begin(), t.d_->v.end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                                 std::to_string(numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        Tensor t;
        t.d_->shape = std::move(shape);
        t.d_->v = std::move(values);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows[0].size() : 0;
        std::vector<double> v;
        v.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("tensor: ragged matrix rows");
            v.insert(v.end(), row.begin(), row.end());
        }
        return from({r, c}, std::move(v), requires_grad);
    }

    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t size() const { return d_->v.size(); }

    // Tensor is a shared handle; accessors are const-callable and hand out
    // mutable views of the shared storage, shared_ptr-style.
    std::vector<double>& values() const { return d_->v; }
    double* data() const { return d_->v.data(); }

    double at(std::size_t i) const { return d_->v[i]; }
    double at(std::size_t i, std::size_t j) const { return d_->v[i * d_->shape[1] + j]; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) const {
        d_->requires_grad = rg;
        if (rg && d_->g.size() != d_->v.size()) d_->g.assign(d_->v.size(), 0.0);
        if (!rg) d_->g.clear();
    }

    bool has_grad() const { return !d_->g.empty(); }
    std::vector<double>& grad() const {
        if (d_->g.empty()) throw ContractError("tensor: gradient buffer absent");
        return d_->g;
    }
    void zero_grad() const {
        std::fill(d_->g.begin(), d_->g.end(), 0.0);
    }

    double max_abs_grad() const {
        double m = 0.0;
        for (double g : d_->g) m = std::max(m, std::abs(g));
        return m;
    }

    // Deep copy; the clone is detached from any tape.
    Tensor clone() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->v = d_->v;
        t.d_->requires_grad = d_->requires_grad;
        if (d_->requires_grad) t.d_->g.assign(t.d_->v.size(), 0.0);
        return t;
    }

    int node() const { return d_->node; }
    bool same_storage(const Tensor& other) const { return d_.get() == other.d_.get(); }

private:
    struct Data {
        Shape shape;
        std::vector<double> v;
        std::vector<double> g;  // empty unless requires_grad
        bool requires_grad = false;
        int node = -1;               // index into the producing tape, -1 = leaf/detached
        const void* tape = nullptr;  // identity of the producing tape
    };
    std::shared_ptr<Data> d_;
    friend class Tape;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": produced a non-finite value");
        }
    }
}

inline double sigmoid_scalar(double x) {
    // Split on sign so exp() never overflows.
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape: define-by-run recorder. Rebuilt per forward pass; nodes are stored in
// creation order, which is a topological order, so backward() is a single
// reverse sweep. Gradients of op outputs are reset at the start of every
// backward; leaf gradients accumulate until zero_grad.
// ---------------------------------------------------------------------------
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t node_count() const { return nodes_.size(); }

    // -- dense linear algebra --------------------------------------------

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
            throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                                 shape_str(b.shape()));
        }
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor out = make_output({m, n}, a.requires_grad() || b.requires_grad());
        const double* pa = a.data();
        const double* pb = b.data();
        double* pc = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = pc + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = pa[i * k + p];
                const double* brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
        detail::check_finite(out.values(), "matmul");
        record(out, {a, b}, [a, b, out, m, k, n]() {
            const double* go = out.grad().data();
            if (a.requires_grad()) {
                // dA = dC * B^T
                double* ga = a.grad().data();
                const double* pb = b.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = go + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = pb + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                // dB = A^T * dC
                double* gb = b.grad().data();
                const double* pa = a.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = go + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = pa[i * k + p];
                        double* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
                }
            }
        });
        return out;
    }

    // -- elementwise -------------------------------------------------------

    Tensor add(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "add");
        Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
        detail::check_finite(out.values(), "add");
        record(out, {a, b}, [a, b, out, n]() {
            const double* go = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
            }
        });
        return out;
    }

    // The one permitted broadcast: [B x n] + [1 x n] bias row.
    Tensor add_bias(const Tensor& x, const Tensor& bias) {
        if (x.rank() != 2 || bias.rank() != 2 || bias.dim(0) != 1 || bias.dim(1) != x.dim(1)) {
            throw DimensionError("add_bias: expected [Bxn] + [1xn], got " + shape_str(x.shape()) +
                                 " + " + shape_str(bias.shape()));
        }
        const std::size_t rows = x.dim(0), cols = x.dim(1);
        Tensor out = make_output(x.shape(), x.requires_grad() || bias.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                out.data()[i * cols + j] = x.data()[i * cols + j] + bias.data()[j];
            }
        }
        detail::check_finite(out.values(), "add_bias");
        record(out, {x, bias}, [x, bias, out, rows, cols]() {
            const double* go = out.grad().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < rows * cols; ++i) gx[i] += go[i];
            }
            if (bias.requires_grad()) {
                double* gb = bias.grad().data();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) gb[j] += go[i * cols + j];
                }
            }
        });
        return out;
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "mul");
        Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
        detail::check_finite(out.values(), "mul");
        record(out, {a, b}, [a, b, out, n]() {
            const double* go = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                const double* pb = b.data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                const double* pa = a.data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
            }
        });
        return out;
    }

    Tensor relu(const Tensor& x) {
        Tensor out = make_output(x.shape(), x.requires_grad());
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
        detail::check_finite(out.values(), "relu");
        record(out, {x}, [x, out, n]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            const double* px = x.data();
            for (std::size_t i = 0; i < n; ++i) {
                if (px[i] > 0.0) gx[i] += go[i];
            }
        });
        return out;
    }

    Tensor sigmoid(const Tensor& x) {
        Tensor out = make_output(x.shape(), x.requires_grad());
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = detail::sigmoid_scalar(x.data()[i]);
        detail::check_finite(out.values(), "sigmoid");
        record(out, {x}, [x, out, n]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            const double* s = out.data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * s[i] * (1.0 - s[i]);
        });
        return out;
    }

    Tensor tanh(const Tensor& x) {
        Tensor out = make_output(x.shape(), x.requires_grad());
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
        detail::check_finite(out.values(), "tanh");
        record(out, {x}, [x, out, n]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            const double* t = out.data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * (1.0 - t[i] * t[i]);
        });
        return out;
    }

    // -- shape surgery -------------------------------------------------------

    // [Bxp] ++ [Bxq] -> [Bx(p+q)], a's columns first.
    Tensor concat_rows(const Tensor& a, const Tensor& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
            throw DimensionError("concat_rows: batch dimensions differ: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        }
        const std::size_t rows = a.dim(0), p = a.dim(1), q = b.dim(1);
        Tensor out = make_output({rows, p + q}, a.requires_grad() || b.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(a.data() + i * p, p, out.data() + i * (p + q));
            std::copy_n(b.data() + i * q, q, out.data() + i * (p + q) + p);
        }
        record(out, {a, b}, [a, b, out, rows, p, q]() {
            const double* go = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += go[i * (p + q) + j];
                }
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += go[i * (p + q) + p + j];
                }
            }
        });
        return out;
    }

    // Columns [c0, c1) of a [Bxn] matrix.
    Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
        if (x.rank() != 2 || c0 >= c1 || c1 > x.dim(1)) {
            throw DimensionError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                                 std::to_string(c1) + ") for " + shape_str(x.shape()));
        }
        const std::size_t rows = x.dim(0), n = x.dim(1), w = c1 - c0;
        Tensor out = make_output({rows, w}, x.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(x.data() + i * n + c0, w, out.data() + i * w);
        }
        record(out, {x}, [x, out, rows, n, c0, w]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += go[i * w + j];
            }
        });
        return out;
    }

    Tensor reshape(const Tensor& x, Shape shape) {
        if (numel(shape) != x.size()) {
            throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                 shape_str(shape));
        }
        Tensor out = make_output(std::move(shape), x.requires_grad());
        std::copy(x.values().begin(), x.values().end(), out.data());
        record(out, {x}, [x, out]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < out.size(); ++i) gx[i] += go[i];
        });
        return out;
    }

    // Row-wise selector: out[i] = mask[i] ? a[i] : b[i]. The mask is data,
    // not a differentiable input; used for the LSTM padding carry-through.
    Tensor select_rows(const std::vector<char>& mask, const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "select_rows");
        if (a.rank() != 2 || mask.size() != a.dim(0)) {
            throw DimensionError("select_rows: mask size " + std::to_string(mask.size()) +
                                 " does not match " + shape_str(a.shape()));
        }
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            const double* src = (mask[i] ? a.data() : b.data()) + i * cols;
            std::copy_n(src, cols, out.data() + i * cols);
        }
        record(out, {a, b}, [mask, a, b, out, rows, cols]() {
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < rows; ++i) {
                const Tensor& target = mask[i] ? a : b;
                if (!target.requires_grad()) continue;
                double* gt = target.grad().data();
                for (std::size_t j = 0; j < cols; ++j) gt[i * cols + j] += go[i * cols + j];
            }
        });
        return out;
    }

    // Gather rows of an embedding table: table [VxE], ids of length B -> [BxE].
    Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
        if (table.rank() != 2) {
            throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
        }
        const std::size_t v = table.dim(0), e = table.dim(1), rows = ids.size();
        for (int id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= v) {
                throw LabelError("embedding: id " + std::to_string(id) +
                                 " out of range for table " + shape_str(table.shape()));
            }
        }
        Tensor out = make_output({rows, e}, table.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * e, e, out.data() + i * e);
        }
        record(out, {table}, [table, out, ids, e]() {
            if (!table.requires_grad()) return;
            double* gt = table.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* row = gt + static_cast<std::size_t>(ids[i]) * e;
                for (std::size_t j = 0; j < e; ++j) row[j] += go[i * e + j];
            }
        });
        return out;
    }

    // -- convolution stack ---------------------------------------------------

    // Cross-correlation over a zero-padded input.
    // input [CxHxW] or [BxCxHxW], kernels [FxCxkHxkW] -> [FxH'xW'] / [BxFxH'xW'].
    Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
                  std::size_t padding) {
        if (stride == 0) throw ContractError("conv2d: stride must be positive");
        const bool batched = input.rank() == 4;
        if (!batched && input.rank() != 3) {
            throw DimensionError("conv2d: input must be [CxHxW] or [BxCxHxW], got " +
                                 shape_str(input.shape()));
        }
        if (kernels.rank() != 4) {
            throw DimensionError("conv2d: kernels must be [FxCxkHxkW], got " +
                                 shape_str(kernels.shape()));
        }
        const std::size_t batch = batched ? input.dim(0) : 1;
        const std::size_t cin = input.dim(batched ? 1 : 0);
        const std::size_t h = input.dim(batched ? 2 : 1);
        const std::size_t w = input.dim(batched ? 3 : 2);
        const std::size_t f = kernels.dim(0), kc = kernels.dim(1);
        const std::size_t kh = kernels.dim(2), kw = kernels.dim(3);
        if (kc != cin) {
            throw DimensionError("conv2d: input channels of " + shape_str(input.shape()) +
                                 " do not match kernels " + shape_str(kernels.shape()));
        }
        if (kh > h + 2 * padding || kw > w + 2 * padding) {
            throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                                 " larger than padded input " + shape_str(input.shape()) +
                                 " (padding " + std::to_string(padding) + ")");
        }
        const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
        const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

        Shape out_shape = batched ? Shape{batch, f, oh, ow} : Shape{f, oh, ow};
        Tensor out = make_output(out_shape, input.requires_grad() || kernels.requires_grad());

        const double* pin = input.data();
        const double* pk = kernels.data();
        double* pout = out.data();
        const std::size_t in_plane = h * w, out_plane = oh * ow;
        const long pad = static_cast<long>(padding);

        for (std::size_t b = 0; b < batch; ++b) {
            const double* img = pin + b * cin * in_plane;
            double* dst = pout + b * f * out_plane;
            for (std::size_t fo = 0; fo < f; ++fo) {
                double* plane = dst + fo * out_plane;
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* src = img + c * in_plane;
                    const double* kern = pk + (fo * cin + c) * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const double kv = kern[ky * kw + kx];
                            if (kv == 0.0) continue;
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                                const long iy = static_cast<long>(oy * stride + ky) - pad;
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                const double* srow = src + iy * w;
                                double* orow = plane + oy * ow;
                                for (std::size_t ox = 0; ox < ow; ++ox) {
                                    const long ix = static_cast<long>(ox * stride + kx) - pad;
                                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                    orow[ox] += kv * srow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        detail::check_finite(out.values(), "conv2d");

        record(out, {input, kernels},
               [input, kernels, out, batch, cin, h, w, f, kh, kw, oh, ow, stride, pad]() {
                   const std::size_t in_plane = h * w, out_plane = oh * ow;
                   const double* go = out.grad().data();
                   const double* pin = input.data();
                   const double* pk = kernels.data();
                   double* gin = input.requires_grad() ? input.grad().data() : nullptr;
                   double* gk = kernels.requires_grad() ? kernels.grad().data() : nullptr;
                   for (std::size_t b = 0; b < batch; ++b) {
                       const double* img = pin + b * cin * in_plane;
                       const double* gout = go + b * f * out_plane;
                       for (std::size_t fo = 0; fo < f; ++fo) {
                           const double* gplane = gout + fo * out_plane;
                           for (std::size_t c = 0; c < cin; ++c) {
                               const double* src = img + c * in_plane;
                               const std::size_t koff = (fo * cin + c) * kh * kw;
                               for (std::size_t ky = 0; ky < kh; ++ky) {
                                   for (std::size_t kx = 0; kx < kw; ++kx) {
                                       const double kv = pk[koff + ky * kw + kx];
                                       double kacc = 0.0;
                                       for (std::size_t oy = 0; oy < oh; ++oy) {
                                           const long iy = static_cast<long>(oy * stride + ky) - pad;
                                           if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                           const double* grow = gplane + oy * ow;
                                           const double* srow = src + iy * w;
                                           double* girow =
                                               gin ? gin + b * cin * in_plane + c * in_plane + iy * w
                                                   : nullptr;
                                           for (std::size_t ox = 0; ox < ow; ++ox) {
                                               const long ix =
                                                   static_cast<long>(ox * stride + kx) - pad;
                                               if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                               const double g = grow[ox];
                                               kacc += g * srow[ix];
                                               if (girow) girow[ix] += g * kv;
                                           }
                                       }
                                       if (gk) gk[koff + ky * kw + kx] += kacc;
                                   }
                               }
                           }
                       }
                   }
               });
        return out;
    }

    // Per-output-channel bias for conv activations: x [BxCxHxW] + bias [C].
    Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
        if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
            throw DimensionError("add_channel_bias: expected [BxCxHxW] + [C], got " +
                                 shape_str(x.shape()) + " + " + shape_str(bias.shape()));
        }
        const std::size_t batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
        Tensor out = make_output(x.shape(), x.requires_grad() || bias.requires_grad());
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double bv = bias.data()[ch];
                const double* src = x.data() + (b * c + ch) * plane;
                double* dst = out.data() + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bv;
            }
        }
        detail::check_finite(out.values(), "add_channel_bias");
        record(out, {x, bias}, [x, bias, out, batch, c, plane]() {
            const double* go = out.grad().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < batch * c * plane; ++i) gx[i] += go[i];
            }
            if (bias.requires_grad()) {
                double* gb = bias.grad().data();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double* src = go + (b * c + ch) * plane;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                        gb[ch] += acc;
                    }
                }
            }
        });
        return out;
    }

    // 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    Tensor max_pool2(const Tensor& x) {
        if (x.rank() != 4) {
            throw DimensionError("max_pool2: input must be [BxCxHxW], got " +
                                 shape_str(x.shape()));
        }
        const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = h / 2, ow = w / 2;
        if (oh == 0 || ow == 0) {
            throw DimensionError("max_pool2: input " + shape_str(x.shape()) + " too small");
        }
        Tensor out = make_output({batch, c, oh, ow}, x.requires_grad());
        auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
        for (std::size_t bc = 0; bc < batch * c; ++bc) {
            const double* src = x.data() + bc * h * w;
            double* dst = out.data() + bc * oh * ow;
            std::size_t* amax = argmax->data() + bc * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    std::size_t best = (2 * oy) * w + 2 * ox;
                    double bv = src[best];
                    const std::size_t cand[3] = {(2 * oy) * w + 2 * ox + 1,
                                                 (2 * oy + 1) * w + 2 * ox,
                                                 (2 * oy + 1) * w + 2 * ox + 1};
                    for (std::size_t idx : cand) {
                        if (src[idx] > bv) {
                            bv = src[idx];
                            best = idx;
                        }
                    }
                    dst[oy * ow + ox] = bv;
                    amax[oy * ow + ox] = bc * h * w + best;
                }
            }
        }
        record(out, {x}, [x, out, argmax]() {
            if (!x.requires_grad()) return;
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < out.size(); ++i) gx[(*argmax)[i]] += go[i];
        });
        return out;
    }

    // -- classification head ---------------------------------------------

    // Row-wise softmax with max-subtraction; rows sum to 1.
    Tensor softmax(const Tensor& logits) {
        if (logits.rank() != 2 || logits.dim(1) == 0) {
            throw DimensionError("softmax: input must be [BxK], K >= 1, got " +
                                 shape_str(logits.shape()));
        }
        detail::check_finite(logits.values(), "softmax(input)");
        const std::size_t rows = logits.dim(0), k = logits.dim(1);
        Tensor out = make_output(logits.shape(), logits.requires_grad());
        for (std::size_t i = 0; i < rows; ++i) {
            const double* row = logits.data() + i * k;
            double* orow = out.data() + i * k;
            double mx = row[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            }
            for (std::size_t j = 0; j < k; ++j) orow[j] /= denom;
        }
        detail::check_finite(out.values(), "softmax");
        record(out, {logits}, [logits, out, rows, k]() {
            if (!logits.requires_grad()) return;
            double* gx = logits.grad().data();
            const double* go = out.grad().data();
            const double* p = out.data();
            for (std::size_t i = 0; i < rows; ++i) {
                const double* prow = p + i * k;
                const double* grow = go + i * k;
                double dot = 0.0;
                for (std::size_t j = 0; j < k; ++j) dot += grow[j] * prow[j];
                for (std::size_t j = 0; j < k; ++j) {
                    gx[i * k + j] += prow[j] * (grow[j] - dot);
                }
            }
        });
        return out;
    }

    // Mean over the batch of -log softmax(logits)[i, label_i]; takes raw
    // logits and uses log-sum-exp internally.
    Tensor sparse_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
        if (logits.rank() != 2) {
            throw DimensionError("sparse_cross_entropy: logits must be [BxK], got " +
                                 shape_str(logits.shape()));
        }
        const std::size_t rows = logits.dim(0), k = logits.dim(1);
        if (labels.size() != rows) {
            throw ContractError("sparse_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
        }
        if (rows == 0) throw ContractError("sparse_cross_entropy: empty batch");
        for (std::size_t i = 0; i < rows; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
                throw LabelError("sparse_cross_entropy: label " + std::to_string(labels[i]) +
                                 " at row " + std::to_string(i) + " out of range [0, " +
                                 std::to_string(k) + ")");
            }
        }
        // Probabilities are kept for the backward rule.
        auto probs = std::make_shared<std::vector<double>>(rows * k);
        double total = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double* row = logits.data() + i * k;
            double* prow = probs->data() + i * k;
            double mx = row[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                prow[j] = std::exp(row[j] - mx);
                denom += prow[j];
            }
            for (std::size_t j = 0; j < k; ++j) prow[j] /= denom;
            total += std::log(denom) + mx - row[labels[i]];
        }
        Tensor out = make_output({1}, logits.requires_grad());
        out.data()[0] = total / static_cast<double>(rows);
        detail::check_finite(out.values(), "sparse_cross_entropy");
        record(out, {logits}, [logits, out, probs, labels, rows, k]() {
            if (!logits.requires_grad()) return;
            const double scale = out.grad()[0] / static_cast<double>(rows);
            double* gx = logits.grad().data();
            for (std::size_t i = 0; i < rows; ++i) {
                const double* prow = probs->data() + i * k;
                for (std::size_t j = 0; j < k; ++j) {
                    double delta = prow[j];
                    if (static_cast<std::size_t>(labels[i]) == j) delta -= 1.0;
                    gx[i * k + j] += scale * delta;
                }
            }
        });
        return out;
    }

    Tensor sum(const Tensor& x) {
        Tensor out = make_output({1}, x.requires_grad());
        double acc = 0.0;
        for (double v : x.values()) acc += v;
        out.data()[0] = acc;
        detail::check_finite(out.values(), "sum");
        record(out, {x}, [x, out]() {
            if (!x.requires_grad()) return;
            const double g = out.grad()[0];
            double* gx = x.grad().data();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
        });
        return out;
    }

    // -- backward ---------------------------------------------------------

    void backward(const Tensor& loss) {
        if (loss.size() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        if (loss.d_->tape != this || loss.d_->node < 0 ||
            static_cast<std::size_t>(loss.d_->node) >= nodes_.size()) {
            throw ContractError("backward: loss is not on this tape");
        }
        // Node-output gradients are recomputed every pass; leaf gradients
        // (node == -1) keep accumulating until the caller zeroes them.
        for (int i = 0; i <= loss.d_->node; ++i) {
            auto& g = nodes_[i].out->g;
            std::fill(g.begin(), g.end(), 0.0);
        }
        loss.d_->g[0] = 1.0;
        for (int i = loss.d_->node; i >= 0; --i) {
            nodes_[i].pull();
            for (const auto& parent : nodes_[i].parents) {
                detail::check_finite(parent->g, "backward");
            }
        }
    }

private:
    struct Node {
        std::function<void()> pull;
        std::shared_ptr<Tensor::Data> out;
        std::vector<std::shared_ptr<Tensor::Data>> parents;  // only those with gradients
    };

    Tensor make_output(Shape shape, bool requires_grad) {
        Tensor t = Tensor::zeros(std::move(shape), record_ && requires_grad);
        return t;
    }

    void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.shape() != b.shape()) {
            throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        }
    }

    void record(const Tensor& out, std::initializer_list<Tensor> inputs,
                std::function<void()> pull) {
        if (!record_ || !out.requires_grad()) return;
        Node node;
        node.pull = std::move(pull);
        node.out = out.d_;
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) node.parents.push_back(t.d_);
        }
        out.d_->node = static_cast<int>(nodes_.size());
        out.d_->tape = this;
        nodes_.push_back(std::move(node));
    }

    bool record_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification of backward(). Perturbs every coordinate of
// x by +/-eps, compares the central difference of f against the recorded
// gradient, and returns the worst relative error with denominator
// max(|numeric|, |analytic|, 1e-8). Non-finite comparisons come back as
// +infinity so callers see them as failures.
// ---------------------------------------------------------------------------
template <typename F>  // F: Tape& -> scalar Tensor, reading x's current values
double gradient_check(F&& f, Tensor& x, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) {
        throw ContractError("gradient_check: eps must be in (0, 1e-2]");
    }
    const bool had_grad = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    {
        Tape tape;
        Tensor loss = f(tape);
        if (loss.size() != 1) throw ContractError("gradient_check: f must produce a scalar");
        tape.backward(loss);
    }
    std::vector<double> analytic = x.grad();
    x.zero_grad();
    x.set_requires_grad(false);

    auto eval = [&]() {
        Tape tape(false);
        Tensor loss = f(tape);
        return loss.values()[0];
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.values()[i];
        x.values()[i] = saved + eps;
        const double fp = eval();
        x.values()[i] = saved - eps;
        const double fm = eval();
        x.values()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        if (!std::isfinite(rel)) {
            worst = std::numeric_limits<double>::infinity();
            break;
        }
        worst = std::max(worst, rel);
    }
    x.set_requires_grad(had_grad);
    return worst;
}

}  // namespace genrefusion
