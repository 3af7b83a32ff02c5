#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bayesfuse/data.hpp"
#include "bayesfuse/metrics.hpp"
#include "test_util.hpp"

using namespace bayesfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bayesfuse_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(Synth, DeterministicAndShaped) {
    const NetworkScale s = NetworkScale::desk();
    const Scene a = synth_scene(5, s), b = synth_scene(5, s), c = synth_scene(6, s);
    EXPECT_TRUE(a.pan.identical(b.pan));
    EXPECT_TRUE(a.ms.identical(b.ms));
    EXPECT_TRUE(a.reference.identical(b.reference));
    EXPECT_FALSE(a.reference.identical(c.reference));
    EXPECT_EQ(a.pan.shape(), (Shape{1, 1, 64, 64}));
    EXPECT_EQ(a.ms.shape(), (Shape{1, 4, 16, 16}));
    EXPECT_EQ(a.reference.shape(), (Shape{1, 4, 64, 64}));
    for (const Tensor* t : {&a.pan, &a.ms, &a.reference})
        for (double v : t->values()) {
            ASSERT_GE(v, -1.0);
            ASSERT_LE(v, 1.0);
        }
}

TEST(Synth, PanTracksReferenceBandMean) {
    const NetworkScale s = NetworkScale::desk();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const RawScene r = synth_raw_scene(seed, s);
        Tensor band_mean({1, 64, 64});
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 64 * 64; ++i) band_mean[i] += r.reference[b * 64 * 64 + i] / 4.0;
        EXPECT_GT(cc(r.pan.reshaped({1, 64, 64}), band_mean), 0.8) << seed;
    }
}

TEST(Synth, RejectsBadParams) {
    SynthParams p;
    p.band_weights = {0.5, 0.5};
    EXPECT_THROW(synth_raw_scene(1, NetworkScale::desk(), p), ConfigError);
    p.band_weights = {0.5, 0.5, 0.5, 0.5};
    EXPECT_THROW(synth_raw_scene(1, NetworkScale::desk(), p), ConfigError);
}

TEST(Degrade, KernelIsBinomial) {
    const auto k = data_detail::decimation_kernel(4);
    const double expect[8] = {1, 7, 21, 35, 35, 21, 7, 1};
    ASSERT_EQ(k.size(), 8u);
    for (int i = 0; i < 8; ++i) EXPECT_EQ(k[i], expect[i] / 128.0);
}

TEST(Degrade, ConstantStaysConstant) {
    const Tensor ref(Shape{1, 4, 32, 32}, 0.37);
    const auto d = wald_degrade(ref, Tensor(Shape{1, 1, 32, 32}, 0.5));
    EXPECT_EQ(d.ms_input.shape(), (Shape{1, 4, 8, 8}));
    for (double v : d.ms_input.values()) EXPECT_NEAR(v, 0.37, 1e-15);
    EXPECT_EQ(d.pan_input.shape(), (Shape{1, 1, 32, 32}));
    EXPECT_EQ(wald_degrade(ref, Tensor(Shape{1, 1, 32, 32}), 4, true).pan_input.shape(), (Shape{1, 1, 8, 8}));
}

TEST(Degrade, DeltaReproducesKernelFootprint) {
    // Delta at (y, x) = (9, 14). Output block i reads inputs 4i-2 .. 4i+5, tap index 9 - (4i - 2).
    Tensor ref({1, 1, 32, 32});
    ref.at(0, 0, 9, 14) = 1.0;
    const Tensor ms = blur_decimate(ref);
    const double k[8] = {1, 7, 21, 35, 35, 21, 7, 1};
    auto tap = [&](long pos, long i) {
        const long t = pos - (4 * i - 2);
        return (t >= 0 && t < 8) ? k[t] / 128.0 : 0.0;
    };
    for (long i = 0; i < 8; ++i)
        for (long j = 0; j < 8; ++j)
            EXPECT_NEAR(ms.at(0, 0, i, j), tap(9, i) * tap(14, j), 1e-17) << i << "," << j;
    // Both taps of row block 2 (inputs 6..13): index 3 -> 35/128; column block 3 (10..17): index 4 -> 35/128.
    EXPECT_NEAR(ms.at(0, 0, 2, 3), (35.0 / 128) * (35.0 / 128), 1e-17);
}

TEST(Degrade, BoundaryReflectionFoldsTaps) {
    // Block 0 reads inputs -2..5; with half-sample reflection -1 -> 0 and -2 -> 1,
    // so a corner delta collects taps 1 and 2 on each axis: (7 + 21) / 128.
    Tensor ref({1, 1, 16, 16});
    ref.at(0, 0, 0, 0) = 1.0;
    const Tensor ms = blur_decimate(ref);
    const double w = 28.0 / 128.0;
    EXPECT_NEAR(ms.at(0, 0, 0, 0), w * w, 1e-17);
    for (std::size_t i = 0; i < ms.numel(); ++i)
        if (i != 0) EXPECT_EQ(ms[i], 0.0);
}

TEST(Degrade, FullScaleShape) {
    const auto d = wald_degrade(Tensor({1, 4, 400, 400}), Tensor({1, 1, 400, 400}));
    EXPECT_EQ(d.ms_input.shape(), (Shape{1, 4, 100, 100}));
    EXPECT_THROW(wald_degrade(Tensor({1, 4, 30, 30}), Tensor({1, 1, 30, 30})), ShapeError);
    EXPECT_THROW(blur_decimate(Tensor({1, 1, 30, 30}), 3), ConfigError);
}

TEST(Degrade, CommutesWithEveryGeometry) {
    const RawScene r = synth_raw_scene(3, NetworkScale::desk());
    for (const auto& g : dihedral_group()) {
        const auto a = wald_degrade(apply_geometry(r.reference, g), apply_geometry(r.pan, g));
        const auto b = wald_degrade(r.reference, r.pan);
        EXPECT_LE(max_abs_diff(a.ms_input, apply_geometry(b.ms_input, g)), 1e-12) << g.rot << g.flip;
        EXPECT_LE(max_abs_diff(a.pan_input, apply_geometry(b.pan_input, g)), 1e-12);
    }
}

TEST(Bicubic, ConstantsAndShape) {
    const Tensor c(Shape{1, 2, 5, 7}, -0.3);
    const Tensor u = bicubic_upsample(c);
    EXPECT_EQ(u.shape(), (Shape{1, 2, 20, 28}));
    for (double v : u.values()) EXPECT_NEAR(v, -0.3, 1e-15);
    EXPECT_EQ(bicubic_upsample(Tensor({1, 4, 100, 100})).shape(), (Shape{1, 4, 400, 400}));
}

TEST(Bicubic, ReproducesRampInInterior) {
    // f(y, x) = 0.2 + 0.05 y - 0.03 x on the coarse grid; the upsampled value
    // at fine pixel (i, j) is f at coarse coordinates ((i + 0.5) / 4 - 0.5, ...).
    const std::size_t n = 10, r = 4;
    Tensor ms({1, 1, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) ms.at(0, 0, y, x) = 0.2 + 0.05 * y - 0.03 * x;
    const Tensor up = bicubic_upsample(ms, r);
    for (std::size_t i = 0; i < n * r; ++i)
        for (std::size_t j = 0; j < n * r; ++j) {
            const double uy = (i + 0.5) / r - 0.5, ux = (j + 0.5) / r - 0.5;
            // Interior: all four taps inside the coarse grid.
            if (uy < 1.0 || ux < 1.0 || uy > n - 3.0 || ux > n - 3.0) continue;
            EXPECT_NEAR(up.at(0, 0, i, j), 0.2 + 0.05 * uy - 0.03 * ux, 1e-10);
        }
}

TEST(Bicubic, KeysWeightsPartitionUnity) {
    for (double f : {0.0, 0.125, 0.375, 0.5, 0.875}) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += data_detail::keys_weight(f - (j - 1));
        EXPECT_NEAR(s, 1.0, 1e-15);
    }
    EXPECT_EQ(data_detail::keys_weight(0.0), 1.0);
    EXPECT_EQ(data_detail::keys_weight(1.0), 0.0);
    EXPECT_EQ(data_detail::keys_weight(2.0), 0.0);
}

TEST(Geometry, GroupLaws) {
    std::mt19937_64 rng(1);
    const Tensor x = testutil::random_tensor({1, 2, 6, 6}, rng);
    EXPECT_TRUE(apply_geometry(apply_geometry(x, Geometry::hflip()), Geometry::hflip()).identical(x));
    EXPECT_TRUE(apply_geometry(apply_geometry(x, Geometry::vflip()), Geometry::vflip()).identical(x));
    Tensor r = x;
    for (int i = 0; i < 4; ++i) r = apply_geometry(r, Geometry::rot90());
    EXPECT_TRUE(r.identical(x));
    // vflip really flips rows.
    const Tensor v = apply_geometry(x, Geometry::vflip());
    EXPECT_EQ(v.at(0, 1, 0, 2), x.at(0, 1, 5, 2));
    // Quarter turn is counter-clockwise: the top-right corner moves to the top-left.
    EXPECT_EQ(apply_geometry(x, Geometry::rot90()).at(0, 0, 0, 0), x.at(0, 0, 0, 5));

    const auto group = dihedral_group();
    ASSERT_EQ(group.size(), 8u);
    for (const auto& a : group)
        for (const auto& b : group) {
            const Geometry ab = a * b;
            EXPECT_NE(std::find(group.begin(), group.end(), ab), group.end());
            EXPECT_TRUE(apply_geometry(x, ab).identical(apply_geometry(apply_geometry(x, b), a)));
        }
}

TEST(Geometry, MetricsInvariantUnderJointFlip) {
    std::mt19937_64 rng(2);
    const Tensor ref = testutil::random_tensor({1, 4, 16, 16}, rng, 0.1, 1.0);
    Tensor fused = ref;
    for (auto& v : fused.data()) v += 0.05 * (std::uniform_real_distribution<double>(-1, 1)(rng));
    const MetricReport a = evaluate_all(fused, ref);
    for (const auto& g : dihedral_group()) {
        const MetricReport b = evaluate_all(apply_geometry(fused, g), apply_geometry(ref, g));
        EXPECT_NEAR(a.cc, b.cc, 1e-12);
        EXPECT_NEAR(a.uiqi, b.uiqi, 1e-12);
        EXPECT_NEAR(a.sam_degrees, b.sam_degrees, 1e-12);
        EXPECT_NEAR(a.ergas, b.ergas, 1e-12);
        EXPECT_NEAR(a.q4, b.q4, 1e-12);
    }
}

TEST(Augment, AppliesJointlyInOrder) {
    const Scene s = synth_scene(8, NetworkScale::desk());
    const auto out = augment(s, dihedral_group());
    ASSERT_EQ(out.size(), 8u);
    EXPECT_TRUE(out[0].reference.identical(s.reference));
    for (std::size_t i = 0; i < 8; ++i) {
        const Geometry g = dihedral_group()[i];
        EXPECT_TRUE(out[i].pan.identical(apply_geometry(s.pan, g)));
        EXPECT_TRUE(out[i].ms.identical(apply_geometry(s.ms, g)));
        EXPECT_TRUE(out[i].reference.identical(apply_geometry(s.reference, g)));
    }
    EXPECT_NE(out[1].id, out[2].id);
}

TEST(Patches, GridAndErrors) {
    const Scene s = synth_scene(9, NetworkScale::desk());
    const auto p = patch_extract(s, 32);
    ASSERT_EQ(p.size(), 4u);
    EXPECT_EQ(p[1].pan.shape(), (Shape{1, 1, 32, 32}));
    EXPECT_EQ(p[1].ms.shape(), (Shape{1, 4, 8, 8}));
    EXPECT_EQ(p[1].pan.at(0, 0, 3, 4), s.pan.at(0, 0, 3, 36));
    EXPECT_EQ(p[2].ms.at(0, 2, 1, 1), s.ms.at(0, 2, 9, 1));
    EXPECT_EQ(p[3].reference.at(0, 3, 31, 31), s.reference.at(0, 3, 63, 63));
    EXPECT_THROW(patch_extract(s, 12), ShapeError);
    EXPECT_THROW(patch_extract(s, 48), ShapeError);
}

TEST(Split, DisjointAndSized) {
    for (std::size_t n : {1u, 5u, 10u, 37u, 200u}) {
        const Split s = split_indices(n, 42);
        EXPECT_EQ(s.train.size(), static_cast<std::size_t>(std::llround(0.8 * n)));
        EXPECT_EQ(s.train.size() + s.test.size(), n);
        std::vector<std::size_t> all = s.train;
        all.insert(all.end(), s.test.begin(), s.test.end());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
    }
    EXPECT_EQ(split_indices(50, 7).train, split_indices(50, 7).train);
    EXPECT_NE(split_indices(50, 7).train, split_indices(50, 8).train);
}

TEST(Rstf, RoundTripIsBitExact) {
    const auto dir = scratch_dir("rstf");
    std::mt19937_64 rng(3);
    Tensor t = testutil::random_tensor({2, 3, 5, 7}, rng, -1e300, 1e300);
    t[0] = -0.0;
    t[1] = std::numeric_limits<double>::denorm_min();
    t[2] = std::numeric_limits<double>::infinity();
    const auto path = (dir / "t.rstf").string();
    save_rstf(t, path);
    EXPECT_TRUE(load_rstf(path).identical(t));
    EXPECT_EQ(fs::file_size(path), 4u + 1 + 1 + 4 * 4 + 8 * t.numel());

    // Header bytes are little-endian.
    std::ifstream is(path, std::ios::binary);
    std::vector<unsigned char> head(10);
    is.read(reinterpret_cast<char*>(head.data()), 10);
    EXPECT_EQ(std::string(head.begin(), head.begin() + 4), "RSTF");
    EXPECT_EQ(head[4], 1);
    EXPECT_EQ(head[5], 4);
    EXPECT_EQ(head[6], 2);
    EXPECT_EQ(head[7], 0);
}

TEST(Rstf, CorruptFilesNameThePath) {
    const auto dir = scratch_dir("rstf_bad");
    const auto path = (dir / "bad.rstf").string();
    save_rstf(Tensor({2, 2}), path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XSTF", 4);
    }
    try {
        load_rstf(path);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.rstf"), std::string::npos);
    }
    save_rstf(Tensor({2, 2}), path);
    fs::resize_file(path, fs::file_size(path) - 3);
    EXPECT_THROW(load_rstf(path), IoError);
    EXPECT_THROW(load_rstf((dir / "missing.rstf").string()), IoError);
}

TEST(Preview, RangeMapping) {
    const auto dir = scratch_dir("preview");
    const auto path = (dir / "p.ppm").string();
    export_preview(Tensor(Shape{1, 4, 3, 2}, -1.0), path);
    std::ifstream is(path, std::ios::binary);
    std::string magic;
    std::size_t w, h, maxv;
    is >> magic >> w >> h >> maxv;
    is.get();
    EXPECT_EQ(magic, "P6");
    EXPECT_EQ(w, 2u);
    EXPECT_EQ(h, 3u);
    EXPECT_EQ(maxv, 255u);
    std::vector<char> px(3 * w * h);
    is.read(px.data(), static_cast<std::streamsize>(px.size()));
    ASSERT_TRUE(is);
    for (char c : px) EXPECT_EQ(static_cast<unsigned char>(c), 0);
    EXPECT_EQ(is.get(), std::char_traits<char>::eof());

    Tensor rgb({3, 1, 1});
    rgb[0] = 1.0;
    rgb[1] = 0.0;
    rgb[2] = -1.0;
    export_preview(rgb, path);
    std::ifstream is2(path, std::ios::binary);
    is2 >> magic >> w >> h >> maxv;
    is2.get();
    EXPECT_EQ(is2.get(), 255);
    EXPECT_EQ(is2.get(), 128);
    EXPECT_EQ(is2.get(), 0);
    EXPECT_THROW(export_preview(Tensor({2, 2, 2}), path), ShapeError);
}

TEST(Dataset, WriteLoadRoundTrip) {
    const auto dir = scratch_dir("dataset");
    DatasetManifest m;
    const Dataset ds = generate_dataset(11, 5, NetworkScale::desk(), {}, 0.8, &m);
    EXPECT_EQ(ds.train.size(), 4u);
    EXPECT_EQ(ds.test.size(), 1u);
    write_dataset(ds, m, dir.string());
    DatasetManifest back_m;
    const Dataset back = load_dataset(dir.string(), &back_m);
    ASSERT_EQ(back.scenes.size(), 5u);
    EXPECT_EQ(back.train, ds.train);
    EXPECT_EQ(back.scale, ds.scale);
    EXPECT_EQ(back_m.scenes[2].seed, m.scenes[2].seed);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(back.scenes[i].id, ds.scenes[i].id);
        EXPECT_LE(max_abs_diff(back.scenes[i].reference, ds.scenes[i].reference), 1e-15);
        EXPECT_LE(max_abs_diff(back.scenes[i].ms, ds.scenes[i].ms), 1e-15);
        EXPECT_LE(max_abs_diff(back.scenes[i].pan, ds.scenes[i].pan), 1e-15);
    }
    // Each scene regenerates from its recorded seed.
    const Scene again = make_scene("x", synth_raw_scene(m.scenes[3].seed, NetworkScale::desk()));
    EXPECT_TRUE(again.reference.identical(ds.scenes[3].reference));
    EXPECT_THROW(load_dataset((dir / "nope").string()), IoError);
}
