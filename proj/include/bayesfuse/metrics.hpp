#pragma once

// Full-reference fusion quality indexes: CC, UIQI, SAM, ERGAS and Q4.
//
// Images are B x H x W, or N x B x H x W in which case every index is
// computed per image and averaged over the batch.

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace bayesfuse {

struct MetricReport {
    double cc = 0.0;
    double uiqi = 0.0;
    double sam_degrees = 0.0;
    double ergas = 0.0;
    double q4 = 0.0;

    static std::string csv_header() { return "cc,uiqi,sam_deg,ergas,q4"; }
    std::string csv_row() const {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.12g", cc, uiqi, sam_degrees, ergas, q4);
        return buf;
    }
};

struct ErgasParams {
    // Ground sample distances of the PAN (h) and MS (l) images.
    double h = 1.0;
    double l = 4.0;
    // Evaluate the formula as printed originally (no square, l/K under the root).
    // Only for comparison; the default is the standard definition.
    bool verbatim = false;

    double ratio() const { return h / l; }
    void validate() const {
        if (!(h > 0.0 && l > 0.0 && h <= l))
            throw ConfigError("ErgasParams: need 0 < h <= l, got h=" + std::to_string(h) + " l=" + std::to_string(l));
    }
};

struct MetricParams {
    ErgasParams ergas;
    std::optional<std::size_t> uiqi_window; // sliding, stride 1; global when empty
    std::optional<std::size_t> q4_block;    // non-overlapping blocks; global when empty
};

namespace metrics_detail {

/// Non-owning B x H x W view of one image.
struct ImageView {
    const double* data;
    std::size_t bands, h, w;
    double at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }
    std::size_t pixels() const { return h * w; }
};

inline std::vector<ImageView> split_images(const Tensor& t, const char* what) {
    const Shape& s = t.shape();
    if (s.size() == 3) return {ImageView{t.data().data(), s[0], s[1], s[2]}};
    if (s.size() == 4) {
        std::vector<ImageView> out;
        const std::size_t per = s[1] * s[2] * s[3];
        for (std::size_t n = 0; n < s[0]; ++n) out.push_back({t.data().data() + n * per, s[1], s[2], s[3]});
        return out;
    }
    throw ShapeError(std::string(what) + ": expected BxHxW or NxBxHxW, got " + shape_str(s));
}

template <class F>
double batch_mean(const Tensor& x, const Tensor& y, const char* what, F per_image) {
    require_same_shape(x, y, what);
    const auto xs = split_images(x, what), ys = split_images(y, what);
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += per_image(xs[i], ys[i]);
    return acc / static_cast<double>(xs.size());
}

struct Moments {
    double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
};

/// Population moments of band b over the window [y0, y0+hh) x [x0, x0+ww).
inline Moments band_moments(const ImageView& a, const ImageView& c, std::size_t b, std::size_t y0, std::size_t x0,
                            std::size_t hh, std::size_t ww) {
    const double n = static_cast<double>(hh * ww);
    Moments m;
    for (std::size_t y = y0; y < y0 + hh; ++y)
        for (std::size_t x = x0; x < x0 + ww; ++x) {
            m.mx += a.at(b, y, x);
            m.my += c.at(b, y, x);
        }
    m.mx /= n;
    m.my /= n;
    for (std::size_t y = y0; y < y0 + hh; ++y)
        for (std::size_t x = x0; x < x0 + ww; ++x) {
            const double dx = a.at(b, y, x) - m.mx, dy = c.at(b, y, x) - m.my;
            m.sxx += dx * dx;
            m.syy += dy * dy;
            m.sxy += dx * dy;
        }
    m.sxx /= n;
    m.syy /= n;
    m.sxy /= n;
    return m;
}

inline bool band_is_constant(const ImageView& a, std::size_t b) {
    const double first = a.at(b, 0, 0);
    for (std::size_t y = 0; y < a.h; ++y)
        for (std::size_t x = 0; x < a.w; ++x)
            if (a.at(b, y, x) != first) return false;
    return true;
}

/// Correlation x luminance x contrast, with 0/0 factors taken as 1.
inline double uiqi_from_moments(const Moments& m) {
    double corr;
    if (m.sxx == 0.0 && m.syy == 0.0) corr = 1.0;
    else if (m.sxx == 0.0 || m.syy == 0.0) corr = 0.0;
    else corr = m.sxy / std::sqrt(m.sxx * m.syy);
    const double lum_den = m.mx * m.mx + m.my * m.my;
    const double lum = lum_den == 0.0 ? 1.0 : 2.0 * m.mx * m.my / lum_den;
    const double con_den = m.sxx + m.syy;
    const double con = con_den == 0.0 ? 1.0 : 2.0 * std::sqrt(m.sxx * m.syy) / con_den;
    return corr * lum * con;
}

using Quaternion = std::array<double, 4>;

inline Quaternion qmul(const Quaternion& p, const Quaternion& q) {
    return {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
            p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
            p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
            p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
}
inline Quaternion qconj(const Quaternion& q) { return {q[0], -q[1], -q[2], -q[3]}; }
inline double qnorm2(const Quaternion& q) { return q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]; }

/// Q4 over one block. Covariance and both variances go through the same
/// mean((z1 - mu1) conj(z2 - mu2)) path, so identical inputs give exactly 1.
inline double q4_block(const ImageView& a, const ImageView& c, std::size_t y0, std::size_t x0, std::size_t hh,
                       std::size_t ww) {
    const double n = static_cast<double>(hh * ww);
    auto pixel = [&](const ImageView& v, std::size_t y, std::size_t x) {
        return Quaternion{v.at(0, y, x), v.at(1, y, x), v.at(2, y, x), v.at(3, y, x)};
    };
    Quaternion mu1{}, mu2{};
    for (std::size_t y = y0; y < y0 + hh; ++y)
        for (std::size_t x = x0; x < x0 + ww; ++x) {
            const auto p = pixel(a, y, x), q = pixel(c, y, x);
            for (int k = 0; k < 4; ++k) {
                mu1[k] += p[k];
                mu2[k] += q[k];
            }
        }
    for (int k = 0; k < 4; ++k) {
        mu1[k] /= n;
        mu2[k] /= n;
    }
    Quaternion s12{}, s11{}, s22{};
    for (std::size_t y = y0; y < y0 + hh; ++y)
        for (std::size_t x = x0; x < x0 + ww; ++x) {
            Quaternion d1 = pixel(a, y, x), d2 = pixel(c, y, x);
            for (int k = 0; k < 4; ++k) {
                d1[k] -= mu1[k];
                d2[k] -= mu2[k];
            }
            const auto c12 = qmul(d1, qconj(d2)), c11 = qmul(d1, qconj(d1)), c22 = qmul(d2, qconj(d2));
            for (int k = 0; k < 4; ++k) {
                s12[k] += c12[k];
                s11[k] += c11[k];
                s22[k] += c22[k];
            }
        }
    for (int k = 0; k < 4; ++k) {
        s12[k] /= n;
        s11[k] /= n;
        s22[k] /= n;
    }
    const double var1 = std::sqrt(qnorm2(s11)), var2 = std::sqrt(qnorm2(s22));
    const double cov = std::sqrt(qnorm2(s12));
    const double m1 = qnorm2(mu1), m2 = qnorm2(mu2);
    if (var1 + var2 == 0.0) throw NumericError("q4: both images have zero quaternion variance in a block");
    if (m1 + m2 == 0.0) throw NumericError("q4: both images have zero quaternion mean in a block");
    return (2.0 * cov / (var1 + var2)) * (2.0 * std::sqrt(m1 * m2) / (m1 + m2));
}

} // namespace metrics_detail

/// Per-band Pearson correlation averaged over bands.
inline double cc(const Tensor& x, const Tensor& y) {
    using namespace metrics_detail;
    return batch_mean(x, y, "cc", [](const ImageView& a, const ImageView& c) {
        if (a.pixels() < 2) throw ShapeError("cc: need at least 2 pixels per band");
        double acc = 0.0;
        for (std::size_t b = 0; b < a.bands; ++b) {
            const Moments m = band_moments(a, c, b, 0, 0, a.h, a.w);
            if (band_is_constant(a, b) || band_is_constant(c, b) || m.sxx == 0.0 || m.syy == 0.0)
                throw NumericError("cc: band " + std::to_string(b) + " is constant (zero variance)");
            acc += m.sxy / std::sqrt(m.sxx * m.syy);
        }
        return acc / static_cast<double>(a.bands);
    });
}

inline double uiqi(const Tensor& x, const Tensor& y, std::optional<std::size_t> window = std::nullopt) {
    using namespace metrics_detail;
    return batch_mean(x, y, "uiqi", [&](const ImageView& a, const ImageView& c) {
        const std::size_t wh = window ? *window : a.h, ww = window ? *window : a.w;
        if (wh == 0 || wh > a.h || ww > a.w)
            throw ShapeError("uiqi: window " + std::to_string(wh) + " does not fit a " + std::to_string(a.h) + "x" +
                             std::to_string(a.w) + " image");
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t b = 0; b < a.bands; ++b)
            for (std::size_t y0 = 0; y0 + wh <= a.h; ++y0)
                for (std::size_t x0 = 0; x0 + ww <= a.w; ++x0) {
                    acc += uiqi_from_moments(band_moments(a, c, b, y0, x0, wh, ww));
                    ++count;
                }
        return acc / static_cast<double>(count);
    });
}

/// Mean spectral angle in degrees over pixels where neither spectrum is zero.
inline double sam(const Tensor& x, const Tensor& y) {
    using namespace metrics_detail;
    return batch_mean(x, y, "sam", [](const ImageView& a, const ImageView& c) {
        if (a.bands < 2) throw ShapeError("sam: need at least 2 bands, got " + std::to_string(a.bands));
        double acc = 0.0;
        std::size_t valid = 0;
        std::vector<double> u(a.bands), v(a.bands);
        for (std::size_t py = 0; py < a.h; ++py)
            for (std::size_t px = 0; px < a.w; ++px) {
                double nu = 0.0, nv = 0.0;
                for (std::size_t b = 0; b < a.bands; ++b) {
                    u[b] = a.at(b, py, px);
                    v[b] = c.at(b, py, px);
                    nu += u[b] * u[b];
                    nv += v[b] * v[b];
                }
                if (nu == 0.0 || nv == 0.0) continue;
                nu = std::sqrt(nu);
                nv = std::sqrt(nv);
                // 2 atan2(|u^ - v^|, |u^ + v^|) stays accurate near 0 and 180 degrees.
                double dm = 0.0, dp = 0.0;
                for (std::size_t b = 0; b < a.bands; ++b) {
                    const double ub = u[b] / nu, vb = v[b] / nv;
                    dm += (ub - vb) * (ub - vb);
                    dp += (ub + vb) * (ub + vb);
                }
                acc += 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
                ++valid;
            }
        if (valid == 0) throw NumericError("sam: every pixel has a zero spectrum in one of the images");
        return acc / static_cast<double>(valid) * 180.0 / std::numbers::pi;
    });
}

inline double ergas(const Tensor& fused, const Tensor& reference, const ErgasParams& params = {}) {
    using namespace metrics_detail;
    params.validate();
    return batch_mean(fused, reference, "ergas", [&](const ImageView& f, const ImageView& r) {
        const double n = static_cast<double>(f.pixels());
        double acc = 0.0;
        for (std::size_t b = 0; b < f.bands; ++b) {
            double se = 0.0, mean = 0.0;
            for (std::size_t y = 0; y < f.h; ++y)
                for (std::size_t x = 0; x < f.w; ++x) {
                    const double d = f.at(b, y, x) - r.at(b, y, x);
                    se += d * d;
                    mean += r.at(b, y, x);
                }
            mean /= n;
            if (mean == 0.0) throw NumericError("ergas: reference band " + std::to_string(b) + " has zero mean");
            const double rel = std::sqrt(se / n) / mean;
            acc += params.verbatim ? rel : rel * rel;
        }
        const double k = static_cast<double>(f.bands);
        const double inner = params.verbatim ? params.l / k * acc : acc / k;
        return 100.0 * params.ratio() * std::sqrt(inner);
    });
}

inline double q4(const Tensor& x, const Tensor& y, std::optional<std::size_t> block = std::nullopt) {
    using namespace metrics_detail;
    return batch_mean(x, y, "q4", [&](const ImageView& a, const ImageView& c) {
        if (a.bands != 4) throw ShapeError("q4: needs exactly 4 bands, got " + std::to_string(a.bands));
        const std::size_t bh = block ? *block : a.h, bw = block ? *block : a.w;
        if (bh == 0 || a.h % bh != 0 || a.w % bw != 0)
            throw ShapeError("q4: block " + std::to_string(bh) + " does not tile a " + std::to_string(a.h) + "x" +
                             std::to_string(a.w) + " image");
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t y0 = 0; y0 < a.h; y0 += bh)
            for (std::size_t x0 = 0; x0 < a.w; x0 += bw) {
                acc += q4_block(a, c, y0, x0, bh, bw);
                ++count;
            }
        return acc / static_cast<double>(count);
    });
}

inline MetricReport evaluate_all(const Tensor& fused, const Tensor& reference, const MetricParams& params = {}) {
    MetricReport r;
    auto guarded = [](const char* name, auto&& f) {
        try {
            return f();
        } catch (const NumericError& e) {
            throw NumericError(std::string("evaluate_all/") + name + ": " + e.what());
        } catch (const ShapeError& e) {
            throw ShapeError(std::string("evaluate_all/") + name + ": " + e.what());
        }
    };
    r.cc = guarded("cc", [&] { return cc(fused, reference); });
    r.uiqi = guarded("uiqi", [&] { return uiqi(fused, reference, params.uiqi_window); });
    r.sam_degrees = guarded("sam", [&] { return sam(fused, reference); });
    r.ergas = guarded("ergas", [&] { return ergas(fused, reference, params.ergas); });
    r.q4 = guarded("q4", [&] { return q4(fused, reference, params.q4_block); });
    return r;
}

} // namespace bayesfuse
