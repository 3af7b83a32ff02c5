#include <gtest/gtest.h>

#include "bayesfuse/gradcheck.hpp"
#include "bayesfuse/gradcheck_suite.hpp"
#include "bayesfuse/ops.hpp"
#include "test_util.hpp"

using namespace bayesfuse;

namespace {

constexpr int kShapesPerOp = 10;

// Contract every output with fixed random weights so each coordinate of the
// gradient is exercised with a different upstream value.
Var project(Tape& tape, const Var& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(y * tape.constant(testutil::random_tensor(y.shape(), rng)));
}

Shape random_image_shape(std::mt19937_64& rng, std::size_t max_c = 4, std::size_t max_hw = 7) {
    std::uniform_int_distribution<std::size_t> n(1, 2), c(1, max_c), hw(2, max_hw);
    return {n(rng), c(rng), hw(rng), hw(rng)};
}

// Values kept away from the kink of piecewise ops so central differences are valid.
Tensor away_from(double kink, const Shape& s, std::mt19937_64& rng, double gap = 0.05) {
    Tensor t = testutil::random_tensor(s, rng);
    for (auto& v : t.data())
        if (std::fabs(v - kink) < gap) v = kink + (v < kink ? -gap : gap);
    return t;
}

void expect_ok(const GradCheckResult& r) {
    EXPECT_TRUE(r.passed) << r.name << " rel " << r.max_rel_error << " abs " << r.max_abs_error;
    EXPECT_GT(r.coords_checked, 0u);
}

} // namespace

TEST(GradCheck, Conv2d) {
    std::mt19937_64 rng(100);
    for (int t = 0; t < kShapesPerOp; ++t) {
        std::uniform_int_distribution<std::size_t> k(1, 3), st(1, 2), p(0, 1), co(1, 3);
        const std::size_t kk = k(rng), stride = st(rng);
        Shape xs = random_image_shape(rng);
        xs[2] = std::max(xs[2], kk);
        xs[3] = std::max(xs[3], kk);
        const Padding2d pad{p(rng), p(rng)};
        if ((xs[2] + pad.begin + pad.end - kk) % stride != 0 || (xs[3] + pad.begin + pad.end - kk) % stride != 0) {
            --t;
            continue;
        }
        const std::size_t out_c = co(rng);
        const Tensor x = testutil::random_tensor(xs, rng);
        const Tensor w = testutil::random_tensor({out_c, xs[1], kk, kk}, rng);
        const Tensor b = testutil::random_tensor({out_c}, rng);
        expect_ok(check_gradients(
            "conv2d", [&](Tape& tape, const std::vector<Var>& in) {
                return project(tape, conv2d(in[0], in[1], in[2], stride, pad), 7);
            },
            {x, w, b}));
    }
}

TEST(GradCheck, Conv2dTranspose) {
    std::mt19937_64 rng(101);
    for (int t = 0; t < kShapesPerOp; ++t) {
        std::uniform_int_distribution<std::size_t> st(1, 3), extra(0, 1), co(1, 3);
        const std::size_t stride = st(rng), kk = stride + extra(rng), out_c = co(rng);
        const Shape xs = random_image_shape(rng, 3, 5);
        const Tensor x = testutil::random_tensor(xs, rng);
        const Tensor w = testutil::random_tensor({xs[1], out_c, kk, kk}, rng);
        const Tensor b = testutil::random_tensor({out_c}, rng);
        expect_ok(check_gradients(
            "conv2d_transpose", [&](Tape& tape, const std::vector<Var>& in) {
                return project(tape, conv2d_transpose(in[0], in[1], in[2], stride), 8);
            },
            {x, w, b}));
    }
}

TEST(GradCheck, ConcatAndSlice) {
    std::mt19937_64 rng(102);
    for (int t = 0; t < kShapesPerOp; ++t) {
        Shape a = random_image_shape(rng), b = a;
        b[1] = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        const Tensor x = testutil::random_tensor(a, rng), y = testutil::random_tensor(b, rng);
        expect_ok(check_gradients(
            "concat_channels",
            [&](Tape& tape, const std::vector<Var>& in) { return project(tape, concat_channels(in[0], in[1]), 9); },
            {x, y}));
        const std::size_t total = a[1] + b[1];
        const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
        const std::size_t count = std::uniform_int_distribution<std::size_t>(1, total - begin)(rng);
        expect_ok(check_gradients(
            "slice_channels",
            [&](Tape& tape, const std::vector<Var>& in) {
                return project(tape, slice_channels(concat_channels(in[0], in[1]), begin, count), 10);
            },
            {x, y}));
    }
}

TEST(GradCheck, Activations) {
    std::mt19937_64 rng(103);
    for (int t = 0; t < kShapesPerOp; ++t) {
        const Shape s = random_image_shape(rng);
        const Tensor x = testutil::random_tensor(s, rng, -3.0, 3.0);
        const Tensor xk = away_from(0.0, s, rng);
        expect_ok(check_gradients(
            "leaky_relu",
            [&](Tape& tape, const std::vector<Var>& in) { return project(tape, leaky_relu(in[0], 0.2), 11); }, {xk}));
        expect_ok(check_gradients(
            "sigmoid", [&](Tape& tape, const std::vector<Var>& in) { return project(tape, sigmoid(in[0]), 12); },
            {x}));
        expect_ok(check_gradients(
            "tanh", [&](Tape& tape, const std::vector<Var>& in) { return project(tape, tanh(in[0]), 13); }, {x}));
        expect_ok(check_gradients(
            "abs", [&](Tape& tape, const std::vector<Var>& in) { return project(tape, abs(in[0]), 14); }, {xk}));
    }
}

TEST(GradCheck, LogAndClamp) {
    std::mt19937_64 rng(104);
    for (int t = 0; t < kShapesPerOp; ++t) {
        const Shape s = random_image_shape(rng);
        const Tensor pos = testutil::random_tensor(s, rng, 0.2, 2.0);
        expect_ok(check_gradients(
            "log", [&](Tape& tape, const std::vector<Var>& in) { return project(tape, log(in[0]), 15); }, {pos}));
        Tensor c = testutil::random_tensor(s, rng);
        for (auto& v : c.data())
            for (double edge : {-0.5, 0.5})
                if (std::fabs(v - edge) < 0.05) v = edge + (v < edge ? -0.05 : 0.05);
        expect_ok(check_gradients(
            "clamp", [&](Tape& tape, const std::vector<Var>& in) { return project(tape, clamp(in[0], -0.5, 0.5), 16); },
            {c}));
    }
}

TEST(GradCheck, ArithmeticAndReductions) {
    std::mt19937_64 rng(105);
    for (int t = 0; t < kShapesPerOp; ++t) {
        const Shape s = random_image_shape(rng);
        const Tensor a = testutil::random_tensor(s, rng), b = testutil::random_tensor(s, rng);
        expect_ok(check_gradients(
            "add_sub_mul",
            [&](Tape& tape, const std::vector<Var>& in) {
                return project(tape, (in[0] + in[1]) * (in[0] - in[1]) * in[1], 17);
            },
            {a, b}));
        expect_ok(check_gradients(
            "scalar_ops",
            [&](Tape& tape, const std::vector<Var>& in) {
                return project(tape, 1.5 - (in[0] * 2.0 + 0.25) * in[0], 18);
            },
            {a}));
        expect_ok(check_gradients(
            "mean_sum",
            [&](Tape& tape, const std::vector<Var>& in) { return mean(in[0] * in[0]) * 3.0 + sum(in[1]) * sum(in[1]); },
            {a, b}));
    }
}

TEST(GradCheck, DetectsWrongGradient) {
    // A deliberately broken op must be caught by the checker.
    const Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{0.1, -0.4, 0.7, 1.2});
    const auto r = check_gradients("broken", [](Tape& tape, const std::vector<Var>& in) {
        const NodeId xi = in[0].id();
        Tape* tp = &tape;
        Tensor y = in[0].value();
        for (auto& v : y.data()) v = v * v;
        Var sq = tape.record("broken_square", {xi}, std::move(y), [tp, xi](const Tensor& g, GradientMap& grads) {
            Tensor gx = tp->value(xi);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] * 3.0 * gx[i];
            grads.accumulate(xi, std::move(gx));
        });
        return sum(sq);
    }, {x});
    EXPECT_FALSE(r.passed);
}

namespace {

// f(x) = sum_i |x_i| * c_i around the current point; coordinates sitting at 0 are kinks.
struct KinkedProbe {
    std::vector<double> x, c;
    double at(std::size_t i, double d) const {
        double s = 0;
        for (std::size_t j = 0; j < x.size(); ++j) s += c[j] * std::fabs(x[j] + (j == i ? d : 0.0));
        return s;
    }
};

} // namespace

TEST(NetworkProbe, KinksAreSkippedAndRedrawn) {
    KinkedProbe p{{0.0, 0.5, 0.0, -0.3, 0.0, 0.8}, {1.0, 2.0, 1.0, 3.0, 1.0, 0.5}};
    std::vector<double> analytic(p.x.size());
    for (std::size_t j = 0; j < p.x.size(); ++j) analytic[j] = p.x[j] == 0.0 ? 0.0 : p.c[j] * (p.x[j] > 0 ? 1 : -1);

    EXPECT_TRUE(suite_detail::smooth_probe(p.at(9, 0), p.at(1, 1e-6), p.at(1, -1e-6), 1e-6, {}));
    EXPECT_FALSE(suite_detail::smooth_probe(p.at(9, 0), p.at(0, 1e-6), p.at(0, -1e-6), 1e-6, {}));

    NetworkGradcheckOptions opt;
    std::mt19937_64 rng(3);
    SuiteEntry e{"kinked"};
    suite_detail::probe_coords(e, p.x.size(), 8, p.at(9, 0), analytic, [&](std::size_t i, double d) { return p.at(i, d); },
                               rng, opt);
    EXPECT_TRUE(e.passed);
    EXPECT_EQ(e.coords, 8u);
    EXPECT_GT(e.skipped, 0u);
}

TEST(NetworkProbe, SkippingDoesNotHideAWrongGradient) {
    KinkedProbe p{{0.0, 0.5, 0.0, -0.3}, {1.0, 2.0, 1.0, 3.0}};
    std::vector<double> analytic{0.0, 2.0, 0.0, 3.0}; // sign wrong on coordinate 3
    NetworkGradcheckOptions opt;
    std::mt19937_64 rng(4);
    SuiteEntry e{"wrong"};
    suite_detail::probe_coords(e, p.x.size(), 8, p.at(9, 0), analytic, [&](std::size_t i, double d) { return p.at(i, d); },
                               rng, opt);
    EXPECT_FALSE(e.passed);
}

TEST(NetworkProbe, AllKinksGivesUp) {
    KinkedProbe p{{0.0, 0.0}, {1.0, 1.0}};
    std::vector<double> analytic{0.0, 0.0};
    NetworkGradcheckOptions opt;
    std::mt19937_64 rng(5);
    SuiteEntry e{"flat"};
    suite_detail::probe_coords(e, p.x.size(), 4, p.at(9, 0), analytic, [&](std::size_t i, double d) { return p.at(i, d); },
                               rng, opt);
    EXPECT_FALSE(e.passed);
    EXPECT_EQ(e.skipped, 4u * opt.max_draws_factor);
}
