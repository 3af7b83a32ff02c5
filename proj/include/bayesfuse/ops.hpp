#pragma once

// Differentiable operations. Each op has a plain-Tensor overload (forward
// value only) and a Var overload that records itself on the input's tape.

#include <cmath>
#include <string>

#include "autograd.hpp"
#include "kernels.hpp"

namespace bayesfuse {

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* what) {
    if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(what) + ": operands on different tapes");
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

/// Records y = f(x) elementwise; dfdx(x_i, y_i) gives the local derivative.
template <class F, class DF>
Var unary(const Var& x, std::string tag, F f, DF dfdx) {
    Tape* tape = &x.tape();
    const NodeId xi = x.id();
    Tensor y = map_values(x.value(), f);
    const NodeId yi = tape->size();  // id the recorded node will receive
    return tape->record(std::move(tag), {xi}, std::move(y), [tape, xi, yi, dfdx](const Tensor& g, GradientMap& grads) {
        const auto xv = tape->value(xi).data();
        const auto yv = tape->value(yi).data();
        Tensor gx(g.shape());
        auto dst = gx.data();
        auto gs = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = gs[i] * dfdx(xv[i], yv[i]);
        grads.accumulate(xi, std::move(gx));
    });
}

} // namespace detail

// ---------------------------------------------------------------- convolution

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     Padding2d pad) {
    return kernels::conv2d_forward(input, weight, bias, stride, pad);
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
    return conv2d(input, weight, bias, stride, Padding2d::symmetric(padding));
}

inline Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, Padding2d pad) {
    detail::require_same_tape(input, weight, "conv2d");
    detail::require_same_tape(input, bias, "conv2d");
    Tape* tape = &input.tape();
    const NodeId xi = input.id(), wi = weight.id(), bi = bias.id();
    Tensor y = kernels::conv2d_forward(input.value(), weight.value(), bias.value(), stride, pad);
    return tape->record("conv2d", {xi, wi, bi}, std::move(y),
                        [tape, xi, wi, bi, stride, pad](const Tensor& g, GradientMap& grads) {
                            const Tensor& x = tape->value(xi);
                            const Tensor& w = tape->value(wi);
                            Tensor* gx = tape->requires_grad(xi) ? &grads.slot(xi, x.shape()) : nullptr;
                            Tensor* gw = tape->requires_grad(wi) ? &grads.slot(wi, w.shape()) : nullptr;
                            Tensor* gb = tape->requires_grad(bi) ? &grads.slot(bi, tape->value(bi).shape()) : nullptr;
                            kernels::conv2d_backward(x, w, g, stride, pad, gx, gw, gb);
                        });
}

inline Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
    return conv2d(input, weight, bias, stride, Padding2d::symmetric(padding));
}

inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride) {
    return kernels::conv2d_transpose_forward(input, weight, bias, stride);
}

inline Var conv2d_transpose(const Var& input, const Var& weight, const Var& bias, std::size_t stride) {
    detail::require_same_tape(input, weight, "conv2d_transpose");
    detail::require_same_tape(input, bias, "conv2d_transpose");
    Tape* tape = &input.tape();
    const NodeId xi = input.id(), wi = weight.id(), bi = bias.id();
    Tensor y = kernels::conv2d_transpose_forward(input.value(), weight.value(), bias.value(), stride);
    return tape->record("conv2d_transpose", {xi, wi, bi}, std::move(y),
                        [tape, xi, wi, bi, stride](const Tensor& g, GradientMap& grads) {
                            const Tensor& x = tape->value(xi);
                            const Tensor& w = tape->value(wi);
                            Tensor* gx = tape->requires_grad(xi) ? &grads.slot(xi, x.shape()) : nullptr;
                            Tensor* gw = tape->requires_grad(wi) ? &grads.slot(wi, w.shape()) : nullptr;
                            Tensor* gb = tape->requires_grad(bi) ? &grads.slot(bi, tape->value(bi).shape()) : nullptr;
                            kernels::conv2d_transpose_backward(x, w, g, stride, gx, gw, gb);
                        });
}

// ---------------------------------------------------------------- channels

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), pix = a.dim(2) * a.dim(3);
    Tensor out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
    auto dst = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data().begin() + i * ca * pix, ca * pix, dst.begin() + i * (ca + cb) * pix);
        std::copy_n(b.data().begin() + i * cb * pix, cb * pix, dst.begin() + (i * (ca + cb) + ca) * pix);
    }
    return out;
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 4, "slice_channels");
    if (count == 0 || begin + count > x.dim(1))
        throw ShapeError("slice_channels: channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for shape " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), pix = x.dim(2) * x.dim(3);
    Tensor out(Shape{n, count, x.dim(2), x.dim(3)});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.data().begin() + (i * c + begin) * pix, count * pix, out.data().begin() + i * count * pix);
    return out;
}

inline Var slice_channels(const Var& x, std::size_t begin, std::size_t count) {
    Tape* tape = &x.tape();
    const NodeId xi = x.id();
    return tape->record("slice_channels", {xi}, slice_channels(x.value(), begin, count),
                        [tape, xi, begin, count](const Tensor& g, GradientMap& grads) {
                            const Shape& xs = tape->value(xi).shape();
                            Tensor& gx = grads.slot(xi, xs);
                            const std::size_t n = xs[0], c = xs[1], pix = xs[2] * xs[3];
                            for (std::size_t i = 0; i < n; ++i) {
                                const double* src = g.data().data() + i * count * pix;
                                double* dst = gx.data().data() + (i * c + begin) * pix;
                                for (std::size_t k = 0; k < count * pix; ++k) dst[k] += src[k];
                            }
                        });
}

inline Var concat_channels(const Var& a, const Var& b) {
    detail::require_same_tape(a, b, "concat_channels");
    Tape* tape = &a.tape();
    const NodeId ai = a.id(), bi = b.id();
    const std::size_t ca = a.value().dim(1);
    return tape->record("concat_channels", {ai, bi}, concat_channels(a.value(), b.value()),
                        [tape, ai, bi, ca](const Tensor& g, GradientMap& grads) {
                            if (tape->requires_grad(ai)) grads.accumulate(ai, slice_channels(g, 0, ca));
                            if (tape->requires_grad(bi)) grads.accumulate(bi, slice_channels(g, ca, g.dim(1) - ca));
                        });
}

// ---------------------------------------------------------------- elementwise

inline double leaky_relu_value(double v, double slope) { return v >= 0.0 ? v : slope * v; }
inline double sigmoid_value(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    return detail::map_values(x, [slope](double v) { return leaky_relu_value(v, slope); });
}
inline Var leaky_relu(const Var& x, double slope) {
    // The derivative at exactly 0 takes the positive branch.
    return detail::unary(
        x, "leaky_relu", [slope](double v) { return leaky_relu_value(v, slope); },
        [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& x) { return detail::map_values(x, sigmoid_value); }
inline Var sigmoid(const Var& x) {
    return detail::unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) { return detail::map_values(x, [](double v) { return std::tanh(v); }); }
inline Var tanh(const Var& x) {
    return detail::unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor abs(const Tensor& x) { return detail::map_values(x, [](double v) { return std::fabs(v); }); }
inline Var abs(const Var& x) {
    return detail::unary(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline void require_positive(const Tensor& x, const char* what) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!(x[i] > 0.0))
            throw NumericError(std::string(what) + ": non-positive argument " + std::to_string(x[i]) + " at index " +
                               std::to_string(i) + " (missing clamp upstream?)");
    }
}

inline Tensor log(const Tensor& x) {
    require_positive(x, "log");
    return detail::map_values(x, [](double v) { return std::log(v); });
}
inline Var log(const Var& x) {
    require_positive(x.value(), "log");
    return detail::unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::map_values(x, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}
/// Gradient passes where lo <= x <= hi and is zero where the value was clipped.
inline Var clamp(const Var& x, double lo, double hi) {
    return detail::unary(
        x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

inline Var add_scalar(const Var& x, double c) {
    return detail::unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}
inline Var mul_scalar(const Var& x, double c) {
    return detail::unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}
/// c - x
inline Var rsub_scalar(double c, const Var& x) {
    return detail::unary(x, "rsub_scalar", [c](double v) { return c - v; }, [](double, double) { return -1.0; });
}

namespace detail {

template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, std::string tag, F f, DA dfda, DB dfdb) {
    require_same_tape(a, b, tag.c_str());
    require_same_shape(a.value(), b.value(), tag.c_str());
    Tape* tape = &a.tape();
    const NodeId ai = a.id(), bi = b.id();
    Tensor y(a.value().shape());
    {
        auto av = a.value().data(), bv = b.value().data();
        auto yv = y.data();
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = f(av[i], bv[i]);
    }
    return tape->record(std::move(tag), {ai, bi}, std::move(y), [tape, ai, bi, dfda, dfdb](const Tensor& g, GradientMap& grads) {
        const auto av = tape->value(ai).data(), bv = tape->value(bi).data();
        const auto gv = g.data();
        if (tape->requires_grad(ai)) {
            Tensor ga(g.shape());
            for (std::size_t i = 0; i < gv.size(); ++i) ga[i] = gv[i] * dfda(av[i], bv[i]);
            grads.accumulate(ai, std::move(ga));
        }
        if (tape->requires_grad(bi)) {
            Tensor gb(g.shape());
            for (std::size_t i = 0; i < gv.size(); ++i) gb[i] = gv[i] * dfdb(av[i], bv[i]);
            grads.accumulate(bi, std::move(gb));
        }
    });
}

} // namespace detail

inline Var add(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

namespace detail {
template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, const char* what, F f) {
    require_same_shape(a, b, what);
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = f(a[i], b[i]);
    return y;
}
} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::zip_values(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::zip_values(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::zip_values(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator*(const Var& a, double c) { return mul_scalar(a, c); }
inline Var operator*(double c, const Var& a) { return mul_scalar(a, c); }
inline Var operator-(double c, const Var& a) { return rsub_scalar(c, a); }

// ---------------------------------------------------------------- reductions

inline double sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return s;
}
inline double mean(const Tensor& x) { return sum(x) / static_cast<double>(x.numel()); }

inline Var sum(const Var& x) {
    Tape* tape = &x.tape();
    const NodeId xi = x.id();
    return tape->record("sum", {xi}, Tensor::scalar(sum(x.value())), [tape, xi](const Tensor& g, GradientMap& grads) {
        grads.accumulate(xi, Tensor(tape->value(xi).shape(), g[0]));
    });
}

inline Var mean(const Var& x) {
    Tape* tape = &x.tape();
    const NodeId xi = x.id();
    const double inv = 1.0 / static_cast<double>(x.value().numel());
    return tape->record("mean", {xi}, Tensor::scalar(mean(x.value())),
                        [tape, xi, inv](const Tensor& g, GradientMap& grads) {
                            grads.accumulate(xi, Tensor(tape->value(xi).shape(), g[0] * inv));
                        });
}

} // namespace bayesfuse
