#pragma once

// Synthetic PAN/MS scenes, resolution degradation, bicubic baseline,
// dihedral augmentation, train/test splits, and file formats (RSTF tensors,
// PPM previews, JSON manifests).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "json.hpp"
#include "parallel.hpp"
#include "networks.hpp"
#include "tensor.hpp"

namespace bayesfuse {

// ------------------------------------------------------------------ normalization

/// Affine map between raw values in [min, max] and network values in [-1, 1].
struct NormalizationRecord {
    double min = 0.0;
    double max = 1.0;

    double to_network(double v) const { return 2.0 * (v - min) / (max - min) - 1.0; }
    double to_raw(double v) const { return (v + 1.0) / 2.0 * (max - min) + min; }

    Tensor normalize(const Tensor& raw) const {
        Tensor t = raw;
        for (auto& v : t.data()) v = to_network(v);
        return t;
    }
    Tensor denormalize(const Tensor& net) const {
        Tensor t = net;
        for (auto& v : t.data()) v = to_raw(v);
        return t;
    }
    bool operator==(const NormalizationRecord&) const = default;
};

/// One training/evaluation example. All tensors are in network range [-1, 1].
struct Scene {
    std::string id;
    Tensor pan;       // 1 x 1 x S x S
    Tensor ms;        // 1 x B x S/4 x S/4
    Tensor reference; // 1 x B x S x S
    NormalizationRecord norm;

    std::size_t spatial() const { return pan.dim(2); }
    std::size_t bands() const { return reference.dim(1); }
};

// ------------------------------------------------------------------ degradation

namespace data_detail {

/// Binomial taps C(2r-1, k) / 2^(2r-1), k = 0 .. 2r-1.
inline std::vector<double> decimation_kernel(std::size_t ratio) {
    const std::size_t n = 2 * ratio;
    std::vector<double> k(n, 0.0);
    k[0] = 1.0;
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = i; j > 0; --j) k[j] += k[j - 1];
    const double total = std::ldexp(1.0, static_cast<int>(n - 1));
    for (auto& v : k) v /= total;
    return k;
}

/// Half-sample symmetric index reflection (x[-1] = x[0], x[n] = x[n-1]).
inline std::size_t reflect(long i, std::size_t n) {
    const long len = static_cast<long>(n);
    const long period = 2 * len;
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < len ? m : period - 1 - m);
}

/// Blur + decimate along one axis of an N x C x H x W tensor.
inline Tensor decimate_axis(const Tensor& x, std::size_t ratio, bool along_width) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t len = along_width ? W : H;
    const std::size_t out_len = len / ratio;
    const auto k = decimation_kernel(ratio);
    const long offset = static_cast<long>(ratio / 2); // taps start at ratio*i - ratio/2
    Tensor y(along_width ? Shape{N, C, H, out_len} : Shape{N, C, out_len, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            if (along_width) {
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t o = 0; o < out_len; ++o) {
                        double acc = 0.0;
                        const long start = static_cast<long>(ratio * o) - offset;
                        for (std::size_t t = 0; t < k.size(); ++t)
                            acc += k[t] * x.at(n, c, r, reflect(start + static_cast<long>(t), W));
                        y.at(n, c, r, o) = acc;
                    }
            } else {
                for (std::size_t o = 0; o < out_len; ++o)
                    for (std::size_t col = 0; col < W; ++col) {
                        double acc = 0.0;
                        const long start = static_cast<long>(ratio * o) - offset;
                        for (std::size_t t = 0; t < k.size(); ++t)
                            acc += k[t] * x.at(n, c, reflect(start + static_cast<long>(t), H), col);
                        y.at(n, c, o, col) = acc;
                    }
            }
        }
    return y;
}

} // namespace data_detail

/// Separable binomial blur followed by decimation. The 2*ratio taps are
/// centred on each ratio x ratio block, so flips and 90 degree rotations
/// commute with the operation exactly.
inline Tensor blur_decimate(const Tensor& x, std::size_t ratio = 4) {
    require_rank(x, 4, "blur_decimate");
    if (ratio < 2 || ratio % 2 != 0) throw ConfigError("blur_decimate: ratio must be even and >= 2, got " + std::to_string(ratio));
    if (x.dim(2) % ratio != 0 || x.dim(3) % ratio != 0)
        throw ShapeError("blur_decimate: extents " + shape_str(x.shape()) + " not divisible by ratio " +
                         std::to_string(ratio));
    return data_detail::decimate_axis(data_detail::decimate_axis(x, ratio, true), ratio, false);
}

struct DegradedPair {
    Tensor pan_input;
    Tensor ms_input;
};

/// MS input = blur-decimated reference. PAN stays at full resolution unless
/// `reduce_pan` asks for the fully reduced protocol.
inline DegradedPair wald_degrade(const Tensor& reference, const Tensor& pan_full, std::size_t ratio = 4,
                                 bool reduce_pan = false) {
    require_rank(reference, 4, "wald_degrade(reference)");
    require_rank(pan_full, 4, "wald_degrade(pan)");
    if (pan_full.dim(2) != reference.dim(2) || pan_full.dim(3) != reference.dim(3))
        throw ShapeError("wald_degrade: PAN " + shape_str(pan_full.shape()) + " and reference " +
                         shape_str(reference.shape()) + " differ spatially");
    DegradedPair out;
    out.ms_input = blur_decimate(reference, ratio);
    out.pan_input = reduce_pan ? blur_decimate(pan_full, ratio) : pan_full;
    return out;
}

// ------------------------------------------------------------------ bicubic

namespace data_detail {
inline double keys_weight(double t, double a = -0.5) {
    t = std::fabs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
    return 0.0;
}

inline Tensor upsample_axis(const Tensor& x, std::size_t ratio, bool along_width) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t len = along_width ? W : H;
    const std::size_t out_len = len * ratio;
    // Per output position: 4 source indices (clamped) and weights.
    std::vector<std::array<std::size_t, 4>> idx(out_len);
    std::vector<std::array<double, 4>> wts(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
        const double u = (static_cast<double>(o) + 0.5) / static_cast<double>(ratio) - 0.5;
        const double fl = std::floor(u);
        const double frac = u - fl;
        for (int j = 0; j < 4; ++j) {
            const long src = static_cast<long>(fl) - 1 + j;
            idx[o][j] = static_cast<std::size_t>(std::clamp(src, 0L, static_cast<long>(len) - 1));
            wts[o][j] = keys_weight(frac - static_cast<double>(j - 1));
        }
    }
    Tensor y(along_width ? Shape{N, C, H, out_len} : Shape{N, C, out_len, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            if (along_width) {
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t o = 0; o < out_len; ++o) {
                        double acc = 0.0;
                        for (int j = 0; j < 4; ++j) acc += wts[o][j] * x.at(n, c, r, idx[o][j]);
                        y.at(n, c, r, o) = acc;
                    }
            } else {
                for (std::size_t o = 0; o < out_len; ++o)
                    for (std::size_t col = 0; col < W; ++col) {
                        double acc = 0.0;
                        for (int j = 0; j < 4; ++j) acc += wts[o][j] * x.at(n, c, idx[o][j], col);
                        y.at(n, c, o, col) = acc;
                    }
            }
        }
    return y;
}
} // namespace data_detail

/// Separable Keys bicubic (a = -0.5), pixel-centre aligned, edge-clamped.
inline Tensor bicubic_upsample(const Tensor& ms, std::size_t ratio = 4) {
    require_rank(ms, 4, "bicubic_upsample");
    if (ratio == 0) throw ConfigError("bicubic_upsample: ratio must be positive");
    return data_detail::upsample_axis(data_detail::upsample_axis(ms, ratio, true), ratio, false);
}

// ------------------------------------------------------------------ synthesis

struct SynthParams {
    std::vector<double> band_weights{0.25, 0.25, 0.25, 0.25}; // PAN = weighted band mix
    std::size_t low_components = 6;   // smooth sinusoids per field
    std::size_t edges = 10;           // random rectangles ("materials") in the detail layer
    std::size_t texture_components = 6;
    double detail_amplitude = 0.2;
    // Per-band deviation of the detail layer. 0 gives detail shared by all bands;
    // otherwise rectangle signatures are a * (1 + spread * u_b) and texture gains
    // 1 + spread * u_b / 4, u_b ~ U(-1, 1).
    double spectral_spread = 0.0;

    void validate(std::size_t bands) const {
        if (band_weights.size() != bands)
            throw ConfigError("SynthParams: band_weights has " + std::to_string(band_weights.size()) +
                              " entries for " + std::to_string(bands) + " bands");
        double s = 0.0;
        for (double w : band_weights) {
            if (w < 0.0) throw ConfigError("SynthParams: band weights must be nonnegative");
            s += w;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw ConfigError("SynthParams: band weights must sum to 1");
        if (!(detail_amplitude >= 0.0 && detail_amplitude <= 0.25))
            throw ConfigError("SynthParams: detail_amplitude must lie in [0, 0.25]");
        if (!(spectral_spread >= 0.0 && spectral_spread <= 1.0))
            throw ConfigError("SynthParams: spectral_spread must lie in [0, 1]");
    }
};

namespace data_detail {

/// S x S field in [-1, 1]: random sinusoids with frequencies in [fmin, fmax]
/// cycles per image, rescaled by the peak magnitude.
inline std::vector<double> sinusoid_field(std::size_t S, std::size_t count, double fmin, double fmax,
                                          std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(fmin, fmax), phase(0.0, 2.0 * std::numbers::pi),
        angle(0.0, std::numbers::pi), amp(0.5, 1.0);
    std::vector<double> f(S * S, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
        const double fr = freq(rng), ph = phase(rng), th = angle(rng), a = amp(rng);
        const double kx = 2.0 * std::numbers::pi * fr * std::cos(th) / static_cast<double>(S);
        const double ky = 2.0 * std::numbers::pi * fr * std::sin(th) / static_cast<double>(S);
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x)
                f[y * S + x] += a * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + ph);
    }
    double peak = 0.0;
    for (double v : f) peak = std::max(peak, std::fabs(v));
    if (peak > 0.0)
        for (auto& v : f) v /= peak;
    return f;
}

/// High-frequency layer, one S x S field per band: sharp-edged rectangles plus
/// fine texture. Identical across bands unless spectral_spread > 0. All bands
/// share one peak normalization, so signatures survive it.
inline std::vector<std::vector<double>> detail_fields(std::size_t S, std::size_t B, const SynthParams& p,
                                                      std::mt19937_64& rng) {
    std::vector<std::vector<double>> f(B, std::vector<double>(S * S, 0.0));
    std::uniform_int_distribution<std::size_t> pos(0, S - 1), ext(S / 16 + 1, S / 3 + 1);
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    std::vector<double> sig(B);
    for (std::size_t e = 0; e < p.edges; ++e) {
        const std::size_t y0 = pos(rng), x0 = pos(rng), h = ext(rng), w = ext(rng);
        const double a = amp(rng);
        for (auto& v : sig) v = a * (1.0 + p.spectral_spread * amp(rng));
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = y0; y < std::min(S, y0 + h); ++y)
                for (std::size_t x = x0; x < std::min(S, x0 + w); ++x) f[b][y * S + x] += sig[b];
    }
    const auto tex = sinusoid_field(S, p.texture_components, S / 8.0, S / 4.0, rng);
    double peak = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double g = 1.0 + 0.25 * p.spectral_spread * amp(rng);
        double mean = 0.0;
        for (std::size_t i = 0; i < S * S; ++i) {
            f[b][i] += 0.5 * g * tex[i];
            mean += f[b][i] / static_cast<double>(S * S);
        }
        for (auto& v : f[b]) {
            v -= mean;
            peak = std::max(peak, std::fabs(v));
        }
    }
    if (peak > 0.0)
        for (auto& band : f)
            for (auto& v : band) v /= peak;
    return f;
}

} // namespace data_detail

/// Raw (unnormalized, [0, 1]) PAN and reference for one synthetic scene.
struct RawScene {
    Tensor pan;       // 1 x 1 x S x S
    Tensor reference; // 1 x B x S x S
};

inline RawScene synth_raw_scene(std::uint64_t seed, const NetworkScale& scale, const SynthParams& params = {}) {
    scale.validate();
    params.validate(scale.bands);
    const std::size_t S = scale.spatial, B = scale.bands;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mix(0.6, 0.9);

    const auto shared = data_detail::sinusoid_field(S, params.low_components, 0.5, 3.0, rng);
    const auto detail = data_detail::detail_fields(S, B, params, rng);
    RawScene out{Tensor({1, 1, S, S}), Tensor({1, B, S, S})};
    for (std::size_t b = 0; b < B; ++b) {
        const auto own = data_detail::sinusoid_field(S, params.low_components, 0.5, 3.0, rng);
        const double a = mix(rng);
        for (std::size_t i = 0; i < S * S; ++i) {
            const double low = 0.5 + 0.25 * (a * shared[i] + (1.0 - a) * own[i]);
            const double v = std::clamp(low + params.detail_amplitude * detail[b][i], 0.0, 1.0);
            out.reference[b * S * S + i] = v;
            out.pan[i] += params.band_weights[b] * v;
        }
    }
    return out;
}

inline Scene make_scene(std::string id, const RawScene& raw, std::size_t ratio = 4,
                        const NormalizationRecord& norm = {}) {
    const auto deg = wald_degrade(raw.reference, raw.pan, ratio);
    return Scene{std::move(id), norm.normalize(deg.pan_input), norm.normalize(deg.ms_input),
                 norm.normalize(raw.reference), norm};
}

inline Scene synth_scene(std::uint64_t seed, const NetworkScale& scale, const SynthParams& params = {}) {
    return make_scene("scene_" + std::to_string(seed), synth_raw_scene(seed, scale, params), scale.scale_ratio);
}

// ------------------------------------------------------------------ geometry

/// Element of the dihedral group of the square: x -> R^rot(H^flip(x)), with
/// H a horizontal flip and R a counter-clockwise quarter turn.
struct Geometry {
    int rot = 0; // 0..3
    bool flip = false;

    static Geometry identity() { return {}; }
    static Geometry hflip() { return {0, true}; }
    static Geometry vflip() { return {2, true}; }
    static Geometry rot90() { return {1, false}; }

    /// (a * b)(x) = a(b(x)).
    friend Geometry operator*(const Geometry& a, const Geometry& b) {
        // H R^k = R^-k H
        if (a.flip) return {((a.rot - b.rot) % 4 + 4) % 4, !b.flip};
        return {(a.rot + b.rot) % 4, b.flip};
    }
    bool operator==(const Geometry&) const = default;
};

/// All eight elements in a fixed order: rotations 0..3, then flipped rotations 0..3.
inline std::vector<Geometry> dihedral_group() {
    std::vector<Geometry> g;
    for (bool f : {false, true})
        for (int r = 0; r < 4; ++r) g.push_back({r, f});
    return g;
}

inline Tensor apply_geometry(const Tensor& x, const Geometry& g) {
    require_rank(x, 4, "apply_geometry");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (g.rot % 2 == 1 && H != W) throw ShapeError("apply_geometry: quarter turns need square images, got " + shape_str(x.shape()));
    Tensor cur = x;
    if (g.flip) {
        Tensor t(cur.shape());
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) t.at(n, c, i, j) = cur.at(n, c, i, W - 1 - j);
        cur = std::move(t);
    }
    for (int r = 0; r < g.rot; ++r) {
        const std::size_t h = cur.dim(2), w = cur.dim(3);
        Tensor t({N, C, w, h});
        // Counter-clockwise: out[i][j] = in[j][w - 1 - i].
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < w; ++i)
                    for (std::size_t j = 0; j < h; ++j) t.at(n, c, i, j) = cur.at(n, c, j, w - 1 - i);
        cur = std::move(t);
    }
    return cur;
}

inline Scene apply_geometry(const Scene& s, const Geometry& g) {
    return Scene{s.id, apply_geometry(s.pan, g), apply_geometry(s.ms, g), apply_geometry(s.reference, g), s.norm};
}

/// One scene per requested transform, in the order given.
inline std::vector<Scene> augment(const Scene& s, const std::vector<Geometry>& ops) {
    std::vector<Scene> out;
    for (const auto& g : ops) {
        Scene t = apply_geometry(s, g);
        t.id = s.id + "_r" + std::to_string(g.rot) + (g.flip ? "f" : "");
        out.push_back(std::move(t));
    }
    return out;
}

/// Non-overlapping P x P patches (row-major grid order) with matching MS tiles.
inline std::vector<Scene> patch_extract(const Scene& s, std::size_t patch, std::size_t ratio = 4) {
    const std::size_t S = s.spatial();
    if (patch == 0 || patch % 8 != 0)
        throw ShapeError("patch_extract: patch size " + std::to_string(patch) + " must be a positive multiple of 8");
    if (S % patch != 0)
        throw ShapeError("patch_extract: patch size " + std::to_string(patch) + " does not tile a " +
                         std::to_string(S) + "x" + std::to_string(S) + " scene");
    const std::size_t mp = patch / ratio;
    auto crop = [](const Tensor& t, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
        Tensor out({t.dim(0), t.dim(1), h, w});
        for (std::size_t n = 0; n < t.dim(0); ++n)
            for (std::size_t c = 0; c < t.dim(1); ++c)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) out.at(n, c, y, x) = t.at(n, c, y0 + y, x0 + x);
        return out;
    };
    std::vector<Scene> out;
    for (std::size_t py = 0; py < S / patch; ++py)
        for (std::size_t px = 0; px < S / patch; ++px)
            out.push_back(Scene{s.id + "_p" + std::to_string(py) + "_" + std::to_string(px),
                                crop(s.pan, py * patch, px * patch, patch, patch),
                                crop(s.ms, py * mp, px * mp, mp, mp),
                                crop(s.reference, py * patch, px * patch, patch, patch), s.norm});
    return out;
}

// ------------------------------------------------------------------ splits

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle; the first round(fraction * n) indices train. Both lists sorted.
inline Split split_indices(std::size_t n, std::uint64_t seed, double train_fraction = 0.8) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
        throw ConfigError("split_indices: train fraction must lie in (0, 1]");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    Split s{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)},
            {idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()}};
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// ------------------------------------------------------------------ RSTF files
//
// "RSTF" | u8 version (1) | u8 rank | u32 extents[rank] | f64 payload (row-major), all little-endian.

inline constexpr std::uint8_t kRstfVersion = 1;

inline void save_rstf(const Tensor& t, const std::string& path) {
    if (t.rank() > 255) throw ShapeError("save_rstf: rank too large");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_rstf: cannot open " + path + " for writing");
    os.write("RSTF", 4);
    binio::write_u8(os, kRstfVersion);
    binio::write_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        if (d > 0xFFFFFFFFull) throw ShapeError("save_rstf: extent exceeds 32 bits");
        binio::write_u32(os, static_cast<std::uint32_t>(d));
    }
    for (double v : t.values()) binio::write_f64(os, v);
    if (!os) throw IoError("save_rstf: write failed for " + path);
}

inline Tensor load_rstf(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_rstf: cannot open " + path);
    const std::string ctx = "load_rstf(" + path + ")";
    binio::expect_magic(is, "RSTF", ctx);
    const auto version = binio::read_u8(is, ctx);
    if (version != kRstfVersion) throw IoError(ctx + ": unsupported version " + std::to_string(version));
    const auto rank = binio::read_u8(is, ctx);
    if (rank == 0) throw IoError(ctx + ": rank 0");
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(binio::read_u32(is, ctx));
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = binio::read_f64(is, ctx);
    if (is.peek() != std::char_traits<char>::eof()) throw IoError(ctx + ": trailing bytes after payload");
    return Tensor(std::move(shape), std::move(data));
}

// ------------------------------------------------------------------ previews

/// Binary PPM of one image (B x H x W or 1 x B x H x W). Values in [lo, hi]
/// map linearly to [0, 255]; RGB comes from the first three bands, grey from
/// a single band.
inline void export_preview(const Tensor& t, const std::string& path, double lo = -1.0, double hi = 1.0) {
    Tensor img = t;
    if (img.rank() == 4) {
        if (img.dim(0) != 1) throw ShapeError("export_preview: expected a single image, got " + shape_str(t.shape()));
        img = img.reshaped({img.dim(1), img.dim(2), img.dim(3)});
    }
    require_rank(img, 3, "export_preview");
    const std::size_t B = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (B != 1 && B < 3) throw ShapeError("export_preview: need 1 or at least 3 bands, got " + std::to_string(B));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("export_preview: cannot open " + path + " for writing");
    os << "P6\n" << W << " " << H << "\n255\n";
    auto to_byte = [&](double v) {
        const double u = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        return static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0)));
    };
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) os.put(to_byte(img[((B == 1 ? 0 : c) * H + y) * W + x]));
    if (!os) throw IoError("export_preview: write failed for " + path);
}

// ------------------------------------------------------------------ datasets

struct DatasetManifest {
    struct Entry {
        std::string id;
        std::uint64_t seed = 0;
        std::string pan, ms, reference; // paths relative to the manifest directory
    };
    std::vector<Entry> scenes;
    std::vector<std::size_t> train, test;
    std::uint64_t seed = 0;
    NetworkScale scale;
    SynthParams params;
    NormalizationRecord norm;
    double train_fraction = 0.8;
};

inline void to_json(nlohmann::json& j, const NetworkScale& s) {
    j = {{"spatial", s.spatial}, {"bands", s.bands}, {"width_divisor", s.width_divisor}, {"scale_ratio", s.scale_ratio}};
}
inline void from_json(const nlohmann::json& j, NetworkScale& s) {
    s.spatial = j.at("spatial").get<std::size_t>();
    s.bands = j.at("bands").get<std::size_t>();
    s.width_divisor = j.at("width_divisor").get<std::size_t>();
    s.scale_ratio = j.at("scale_ratio").get<std::size_t>();
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& e : m.scenes)
        scenes.push_back({{"id", e.id}, {"seed", e.seed}, {"pan", e.pan}, {"ms", e.ms}, {"reference", e.reference}});
    return {{"format", "bayesfuse-dataset"},
            {"version", 1},
            {"seed", m.seed},
            {"scale", m.scale},
            {"synth",
             {{"band_weights", m.params.band_weights},
              {"low_components", m.params.low_components},
              {"edges", m.params.edges},
              {"texture_components", m.params.texture_components},
              {"detail_amplitude", m.params.detail_amplitude},
              {"spectral_spread", m.params.spectral_spread}}},
            {"normalization", {{"min", m.norm.min}, {"max", m.norm.max}}},
            {"train_fraction", m.train_fraction},
            {"split", {{"train", m.train}, {"test", m.test}}},
            {"scenes", scenes}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.scale = j.at("scale").get<NetworkScale>();
        const auto& s = j.at("synth");
        m.params.band_weights = s.at("band_weights").get<std::vector<double>>();
        m.params.low_components = s.at("low_components").get<std::size_t>();
        m.params.edges = s.at("edges").get<std::size_t>();
        m.params.texture_components = s.at("texture_components").get<std::size_t>();
        m.params.detail_amplitude = s.at("detail_amplitude").get<double>();
        m.params.spectral_spread = s.at("spectral_spread").get<double>();
        m.norm.min = j.at("normalization").at("min").get<double>();
        m.norm.max = j.at("normalization").at("max").get<double>();
        m.train_fraction = j.at("train_fraction").get<double>();
        m.train = j.at("split").at("train").get<std::vector<std::size_t>>();
        m.test = j.at("split").at("test").get<std::vector<std::size_t>>();
        for (const auto& e : j.at("scenes"))
            m.scenes.push_back({e.at("id").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                                e.at("pan").get<std::string>(), e.at("ms").get<std::string>(),
                                e.at("reference").get<std::string>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("dataset manifest: ") + e.what());
    }
}

/// Per-scene seeds drawn sequentially from one generator seeded with `seed`.
inline std::vector<std::uint64_t> scene_seeds(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> out(n);
    for (auto& s : out) s = rng();
    return out;
}

struct Dataset {
    std::vector<Scene> scenes;
    std::vector<std::size_t> train, test;
    NetworkScale scale;

    std::vector<Scene> train_scenes() const {
        std::vector<Scene> out;
        for (auto i : train) out.push_back(scenes.at(i));
        return out;
    }
    std::vector<Scene> test_scenes() const {
        std::vector<Scene> out;
        for (auto i : test) out.push_back(scenes.at(i));
        return out;
    }
};

inline Dataset generate_dataset(std::uint64_t seed, std::size_t n_scenes, const NetworkScale& scale,
                                const SynthParams& params = {}, double train_fraction = 0.8,
                                DatasetManifest* manifest = nullptr, std::size_t threads = 1) {
    if (n_scenes == 0) throw ConfigError("generate_dataset: n_scenes must be positive");
    scale.validate();
    params.validate(scale.bands);
    Dataset ds;
    ds.scale = scale;
    const auto seeds = scene_seeds(seed, n_scenes);
    ds.scenes.resize(n_scenes);
    parallel_for(n_scenes, threads, [&](std::size_t i) {
        char id[32];
        std::snprintf(id, sizeof id, "scene_%04zu", i);
        ds.scenes[i] = make_scene(id, synth_raw_scene(seeds[i], scale, params), scale.scale_ratio);
    });
    const auto split = split_indices(n_scenes, seed, train_fraction);
    ds.train = split.train;
    ds.test = split.test;
    if (manifest) {
        manifest->seed = seed;
        manifest->scale = scale;
        manifest->params = params;
        manifest->train_fraction = train_fraction;
        manifest->train = ds.train;
        manifest->test = ds.test;
        manifest->scenes.clear();
        for (std::size_t i = 0; i < n_scenes; ++i) {
            const std::string& id = ds.scenes[i].id;
            manifest->scenes.push_back({id, seeds[i], id + "_pan.rstf", id + "_ms.rstf", id + "_ref.rstf"});
        }
    }
    return ds;
}

/// Writes raw-domain RSTF files plus manifest.json into `dir`.
inline DatasetManifest write_dataset(const Dataset& ds, const DatasetManifest& manifest, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
        const auto& s = ds.scenes[i];
        const auto& e = manifest.scenes.at(i);
        save_rstf(s.norm.denormalize(s.pan), (fs::path(dir) / e.pan).string());
        save_rstf(s.norm.denormalize(s.ms), (fs::path(dir) / e.ms).string());
        save_rstf(s.norm.denormalize(s.reference), (fs::path(dir) / e.reference).string());
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("write_dataset: cannot write manifest in " + dir);
    os << manifest_to_json(manifest).dump(2) << "\n";
    return manifest;
}

inline Dataset load_dataset(const std::string& dir, DatasetManifest* manifest_out = nullptr) {
    namespace fs = std::filesystem;
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream is(mpath);
    if (!is) throw IoError("load_dataset: cannot open " + mpath.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_dataset: " + mpath.string() + ": " + e.what());
    }
    const DatasetManifest m = manifest_from_json(j);
    Dataset ds;
    ds.scale = m.scale;
    ds.train = m.train;
    ds.test = m.test;
    for (const auto& e : m.scenes)
        ds.scenes.push_back(Scene{e.id, m.norm.normalize(load_rstf((fs::path(dir) / e.pan).string())),
                                  m.norm.normalize(load_rstf((fs::path(dir) / e.ms).string())),
                                  m.norm.normalize(load_rstf((fs::path(dir) / e.reference).string())), m.norm});
    if (manifest_out) *manifest_out = m;
    return ds;
}

} // namespace bayesfuse
