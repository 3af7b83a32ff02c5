#pragma once

// Raw (non-differentiable) convolution kernels. All tensors are N x C x H x W.
// GEMMs go through Eigen; Eigen is used single-threaded so results are
// deterministic for fixed inputs.

#include <Eigen/Core>

#include <cstddef>
#include <string>

#include "tensor.hpp"

namespace bayesfuse {

/// Zero padding added before (top/left) and after (bottom/right) each spatial axis.
struct Padding2d {
    std::size_t begin = 0;
    std::size_t end = 0;

    static constexpr Padding2d symmetric(std::size_t p) { return {p, p}; }
    bool operator==(const Padding2d&) const = default;
};

namespace kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t in_channels = 0;
    std::size_t in_h = 0, in_w = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t stride = 1;
    Padding2d pad;
    std::size_t out_h = 0, out_w = 0;

    std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
    std::size_t out_pixels() const { return out_h * out_w; }
    std::size_t in_pixels() const { return in_h * in_w; }
    bool is_pointwise() const {
        return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad.begin == 0 && pad.end == 0;
    }
};

namespace detail {

inline std::size_t output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding2d pad,
                                 const char* axis) {
    const std::size_t padded = in + pad.begin + pad.end;
    if (padded < k)
        throw ShapeError(std::string("conv2d: kernel ") + axis + " extent " + std::to_string(k) +
                         " exceeds padded input " + std::to_string(padded));
    if ((padded - k) % stride != 0)
        throw ShapeError(std::string("conv2d: output ") + axis + " extent (" + std::to_string(in) + " + " +
                         std::to_string(pad.begin + pad.end) + " - " + std::to_string(k) + ")/" +
                         std::to_string(stride) + " + 1 is not an integer");
    return (padded - k) / stride + 1;
}

} // namespace detail

/// Geometry of a cross-correlation; weight is out_ch x in_ch x kh x kw.
inline ConvGeometry conv2d_geometry(const Shape& input, const Shape& weight, std::size_t stride, Padding2d pad) {
    if (input.size() != 4) throw ShapeError("conv2d: input must be rank 4, got " + shape_str(input));
    if (weight.size() != 4) throw ShapeError("conv2d: weight must be rank 4, got " + shape_str(weight));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (weight[1] != input[1])
        throw ShapeError("conv2d: input channel dimension (dim 1) is " + std::to_string(input[1]) +
                         " but weight expects " + std::to_string(weight[1]));
    ConvGeometry g;
    g.batch = input[0];
    g.in_channels = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.out_channels = weight[0];
    g.kernel_h = weight[2];
    g.kernel_w = weight[3];
    g.stride = stride;
    g.pad = pad;
    g.out_h = detail::output_extent(g.in_h, g.kernel_h, stride, pad, "height");
    g.out_w = detail::output_extent(g.in_w, g.kernel_w, stride, pad, "width");
    return g;
}

/// Geometry of a transposed convolution (no padding); weight is in_ch x out_ch x kh x kw.
/// Returned in the equivalent forward-conv form: "in" is the transposed conv's output.
inline ConvGeometry conv2d_transpose_geometry(const Shape& input, const Shape& weight, std::size_t stride) {
    if (input.size() != 4) throw ShapeError("conv2d_transpose: input must be rank 4, got " + shape_str(input));
    if (weight.size() != 4) throw ShapeError("conv2d_transpose: weight must be rank 4, got " + shape_str(weight));
    if (stride == 0) throw ShapeError("conv2d_transpose: stride must be positive");
    if (weight[0] != input[1])
        throw ShapeError("conv2d_transpose: input channel dimension (dim 1) is " + std::to_string(input[1]) +
                         " but weight expects " + std::to_string(weight[0]));
    if (weight[2] < stride || weight[3] < stride)
        throw ShapeError("conv2d_transpose: kernel " + std::to_string(weight[2]) + "x" + std::to_string(weight[3]) +
                         " smaller than stride " + std::to_string(stride));
    ConvGeometry g;
    g.batch = input[0];
    g.out_channels = weight[0];
    g.in_channels = weight[1];
    g.kernel_h = weight[2];
    g.kernel_w = weight[3];
    g.stride = stride;
    g.out_h = input[2];
    g.out_w = input[3];
    g.in_h = (input[2] - 1) * stride + weight[2];
    g.in_w = (input[3] - 1) * stride + weight[3];
    return g;
}

/// Unfolds one C x H x W image into a (C*kh*kw) x (oh*ow) row-major matrix.
inline void im2col(const double* img, const ConvGeometry& g, double* col) {
    const std::size_t opix = g.out_pixels();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = img + c * g.in_pixels();
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * opix;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad.begin);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad.begin);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds the columns back into a C x H x W image.
inline void col2im_add(const double* col, const ConvGeometry& g, double* img) {
    const std::size_t opix = g.out_pixels();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = img + c * g.in_pixels();
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * opix;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad.begin);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad.begin);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline void add_channel_bias(double* out, const double* bias, std::size_t channels, std::size_t pixels) {
    for (std::size_t c = 0; c < channels; ++c) {
        double* p = out + c * pixels;
        const double b = bias[c];
        for (std::size_t i = 0; i < pixels; ++i) p[i] += b;
    }
}

inline void accumulate_channel_sums(const double* grad, double* bias_grad, std::size_t channels,
                                    std::size_t pixels) {
    for (std::size_t c = 0; c < channels; ++c) {
        const double* p = grad + c * pixels;
        double s = 0.0;
        for (std::size_t i = 0; i < pixels; ++i) s += p[i];
        bias_grad[c] += s;
    }
}

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                             Padding2d pad) {
    const ConvGeometry g = conv2d_geometry(input.shape(), weight.shape(), stride, pad);
    if (bias.numel() != g.out_channels)
        throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                         std::to_string(g.out_channels));
    Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
    const ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.patch_size()));
    std::vector<double> col(g.is_pointwise() ? 0 : g.patch_size() * g.out_pixels());
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* img = input.data().data() + n * g.in_channels * g.in_pixels();
        double* dst = out.data().data() + n * g.out_channels * g.out_pixels();
        const double* cols = img;
        if (!g.is_pointwise()) {
            im2col(img, g, col.data());
            cols = col.data();
        }
        const ConstMatrixMap cm(cols, static_cast<Eigen::Index>(g.patch_size()),
                                static_cast<Eigen::Index>(g.out_pixels()));
        MatrixMap om(dst, static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(g.out_pixels()));
        om.noalias() = w * cm;
        add_channel_bias(dst, bias.data().data(), g.out_channels, g.out_pixels());
    }
    return out;
}

/// Gradients of conv2d. Null outputs are skipped.
inline void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, std::size_t stride,
                            Padding2d pad, Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias) {
    const ConvGeometry g = conv2d_geometry(input.shape(), weight.shape(), stride, pad);
    const ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.patch_size()));
    std::vector<double> col(g.patch_size() * g.out_pixels());
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* img = input.data().data() + n * g.in_channels * g.in_pixels();
        const double* gout = grad_out.data().data() + n * g.out_channels * g.out_pixels();
        const ConstMatrixMap gm(gout, static_cast<Eigen::Index>(g.out_channels),
                                static_cast<Eigen::Index>(g.out_pixels()));
        if (grad_weight) {
            const double* cols = img;
            if (!g.is_pointwise()) {
                im2col(img, g, col.data());
                cols = col.data();
            }
            const ConstMatrixMap cm(cols, static_cast<Eigen::Index>(g.patch_size()),
                                    static_cast<Eigen::Index>(g.out_pixels()));
            MatrixMap gw(grad_weight->data().data(), static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.patch_size()));
            gw.noalias() += gm * cm.transpose();
        }
        if (grad_bias) accumulate_channel_sums(gout, grad_bias->data().data(), g.out_channels, g.out_pixels());
        if (grad_input) {
            double* gin = grad_input->data().data() + n * g.in_channels * g.in_pixels();
            if (g.is_pointwise()) {
                MatrixMap gi(gin, static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(g.in_pixels()));
                gi.noalias() += w.transpose() * gm;
            } else {
                MatrixMap cm(col.data(), static_cast<Eigen::Index>(g.patch_size()),
                             static_cast<Eigen::Index>(g.out_pixels()));
                cm.noalias() = w.transpose() * gm;
                col2im_add(col.data(), g, gin);
            }
        }
    }
}

inline Tensor conv2d_transpose_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                       std::size_t stride) {
    // g describes the adjoint forward conv: g.in_* is our output, g.out_* is our input.
    const ConvGeometry g = conv2d_transpose_geometry(input.shape(), weight.shape(), stride);
    if (bias.numel() != g.in_channels)
        throw ShapeError("conv2d_transpose: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                         std::to_string(g.in_channels));
    Tensor out(Shape{g.batch, g.in_channels, g.in_h, g.in_w});
    const ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.patch_size()));
    std::vector<double> col(g.patch_size() * g.out_pixels());
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* x = input.data().data() + n * g.out_channels * g.out_pixels();
        double* dst = out.data().data() + n * g.in_channels * g.in_pixels();
        const ConstMatrixMap xm(x, static_cast<Eigen::Index>(g.out_channels),
                                static_cast<Eigen::Index>(g.out_pixels()));
        MatrixMap cm(col.data(), static_cast<Eigen::Index>(g.patch_size()),
                     static_cast<Eigen::Index>(g.out_pixels()));
        cm.noalias() = w.transpose() * xm;
        col2im_add(col.data(), g, dst);
        add_channel_bias(dst, bias.data().data(), g.in_channels, g.in_pixels());
    }
    return out;
}

inline void conv2d_transpose_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                                      std::size_t stride, Tensor* grad_input, Tensor* grad_weight,
                                      Tensor* grad_bias) {
    const ConvGeometry g = conv2d_transpose_geometry(input.shape(), weight.shape(), stride);
    const ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.patch_size()));
    std::vector<double> col(g.patch_size() * g.out_pixels());
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* x = input.data().data() + n * g.out_channels * g.out_pixels();
        const double* gout = grad_out.data().data() + n * g.in_channels * g.in_pixels();
        if (grad_bias) accumulate_channel_sums(gout, grad_bias->data().data(), g.in_channels, g.in_pixels());
        if (!grad_input && !grad_weight) continue;
        im2col(gout, g, col.data());
        const ConstMatrixMap cm(col.data(), static_cast<Eigen::Index>(g.patch_size()),
                                static_cast<Eigen::Index>(g.out_pixels()));
        if (grad_input) {
            MatrixMap gi(grad_input->data().data() + n * g.out_channels * g.out_pixels(),
                         static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(g.out_pixels()));
            gi.noalias() += w * cm;
        }
        if (grad_weight) {
            const ConstMatrixMap xm(x, static_cast<Eigen::Index>(g.out_channels),
                                    static_cast<Eigen::Index>(g.out_pixels()));
            MatrixMap gw(grad_weight->data().data(), static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.patch_size()));
            gw.noalias() += xm * cm.transpose();
        }
    }
}

} // namespace kernels
} // namespace bayesfuse
