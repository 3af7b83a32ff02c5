#pragma once

// Finite-difference sweep over every differentiable op and over whole
// generator / discriminator instances. Shared by the CLI and the acceptance run.

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "networks.hpp"
#include "ops.hpp"

namespace bayesfuse {

struct SuiteEntry {
    std::string name;
    std::size_t instances = 0;
    std::size_t coords = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t skipped = 0; // probes discarded for straddling a kink
    bool passed = true;

    void absorb(const GradCheckResult& r) {
        ++instances;
        coords += r.coords_checked;
        max_rel_error = std::max(max_rel_error, r.max_rel_error);
        max_abs_error = std::max(max_abs_error, r.max_abs_error);
        passed = passed && r.passed && r.coords_checked > 0;
    }
};

namespace suite_detail {

inline Tensor uniform(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

/// Moves values out of a band around each kink so central differences do not straddle it.
inline Tensor avoid(Tensor t, std::initializer_list<double> kinks, double gap = 0.05) {
    for (auto& v : t.data())
        for (double k : kinks)
            if (std::fabs(v - k) < gap) v = k + (v < k ? -gap : gap);
    return t;
}

inline Shape image_shape(std::mt19937_64& rng, std::size_t max_c = 4, std::size_t max_hw = 7) {
    std::uniform_int_distribution<std::size_t> n(1, 2), c(1, max_c), hw(2, max_hw);
    return {n(rng), c(rng), hw(rng), hw(rng)};
}

/// Random linear functional of y, so every output coordinate gets its own upstream weight.
inline Var project(Tape& tape, const Var& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(y * tape.constant(uniform(y.shape(), rng)));
}

} // namespace suite_detail

/// Every op on `instances` random shapes each.
inline std::vector<SuiteEntry> run_op_gradchecks(std::size_t instances = 10, std::uint64_t seed = 1) {
    using namespace suite_detail;
    std::mt19937_64 rng(seed);
    std::vector<SuiteEntry> out;
    auto entry = [&](const std::string& name) -> SuiteEntry& {
        for (auto& e : out)
            if (e.name == name) return e;
        out.push_back({name});
        return out.back();
    };
    auto run = [&](const std::string& name, const LossBuilder& f, const std::vector<Tensor>& in) {
        entry(name).absorb(check_gradients(name, f, in));
    };

    for (std::size_t t = 0; t < instances; ++t) {
        const std::uint64_t proj = rng();
        // conv2d with random kernel, stride and asymmetric padding
        for (;;) {
            std::uniform_int_distribution<std::size_t> k(1, 3), st(1, 2), p(0, 1), co(1, 3);
            const std::size_t kk = k(rng), stride = st(rng);
            Shape xs = image_shape(rng);
            xs[2] = std::max(xs[2], kk);
            xs[3] = std::max(xs[3], kk);
            const Padding2d pad{p(rng), p(rng)};
            if ((xs[2] + pad.begin + pad.end - kk) % stride || (xs[3] + pad.begin + pad.end - kk) % stride) continue;
            const std::size_t oc = co(rng);
            run("conv2d",
                [=](Tape& tape, const std::vector<Var>& v) {
                    return project(tape, conv2d(v[0], v[1], v[2], stride, pad), proj);
                },
                {uniform(xs, rng), uniform({oc, xs[1], kk, kk}, rng), uniform({oc}, rng)});
            break;
        }
        {
            std::uniform_int_distribution<std::size_t> st(1, 3), extra(0, 1), co(1, 3);
            const std::size_t stride = st(rng), kk = stride + extra(rng), oc = co(rng);
            const Shape xs = image_shape(rng, 3, 5);
            run("conv2d_transpose",
                [=](Tape& tape, const std::vector<Var>& v) {
                    return project(tape, conv2d_transpose(v[0], v[1], v[2], stride), proj);
                },
                {uniform(xs, rng), uniform({xs[1], oc, kk, kk}, rng), uniform({oc}, rng)});
        }
        {
            Shape a = image_shape(rng), b = a;
            b[1] = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
            const std::size_t total = a[1] + b[1];
            const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
            const std::size_t count = std::uniform_int_distribution<std::size_t>(1, total - begin)(rng);
            const Tensor x = uniform(a, rng), y = uniform(b, rng);
            run("concat_channels",
                [=](Tape& tape, const std::vector<Var>& v) { return project(tape, concat_channels(v[0], v[1]), proj); },
                {x, y});
            run("slice_channels",
                [=](Tape& tape, const std::vector<Var>& v) {
                    return project(tape, slice_channels(concat_channels(v[0], v[1]), begin, count), proj);
                },
                {x, y});
        }
        {
            const Shape s = image_shape(rng);
            const Tensor wide = uniform(s, rng, -3.0, 3.0), kinked = avoid(uniform(s, rng), {0.0});
            run("leaky_relu",
                [=](Tape& tape, const std::vector<Var>& v) { return project(tape, leaky_relu(v[0], 0.2), proj); },
                {kinked});
            run("sigmoid", [=](Tape& tape, const std::vector<Var>& v) { return project(tape, sigmoid(v[0]), proj); },
                {wide});
            run("tanh", [=](Tape& tape, const std::vector<Var>& v) { return project(tape, tanh(v[0]), proj); },
                {wide});
            run("abs", [=](Tape& tape, const std::vector<Var>& v) { return project(tape, abs(v[0]), proj); },
                {kinked});
            run("log", [=](Tape& tape, const std::vector<Var>& v) { return project(tape, log(v[0]), proj); },
                {uniform(s, rng, 0.2, 2.0)});
            run("clamp",
                [=](Tape& tape, const std::vector<Var>& v) { return project(tape, clamp(v[0], -0.5, 0.5), proj); },
                {avoid(uniform(s, rng), {-0.5, 0.5})});
            const Tensor a = uniform(s, rng), b = uniform(s, rng);
            run("add_sub_mul",
                [=](Tape& tape, const std::vector<Var>& v) {
                    return project(tape, (v[0] + v[1]) * (v[0] - v[1]) * v[1], proj);
                },
                {a, b});
            run("scalar_ops",
                [=](Tape& tape, const std::vector<Var>& v) {
                    return project(tape, 1.5 - (v[0] * 2.0 + 0.25) * v[0], proj);
                },
                {a});
            run("sum_mean",
                [](Tape&, const std::vector<Var>& v) { return mean(v[0] * v[0]) * 3.0 + sum(v[1]) * sum(v[1]); },
                {a, b});
        }
    }
    return out;
}

/// Analytic parameter and input gradients of a whole network against central
/// differences through the plain-tensor forward pass, using a random linear
/// functional of the output as the loss. `coords` parameter coordinates and the
/// same number of input coordinates are compared per instance.
///
/// A network has thousands of leaky-ReLU units, so some probes land within h of
/// a kink. Such a probe is recognized by its one-sided differences disagreeing
/// by more than the tolerance; it is counted in `skipped` and replaced by a
/// fresh coordinate. Skipping looks only at the numeric side, so it cannot hide
/// a wrong analytic gradient.
struct NetworkGradcheckOptions {
    std::size_t instances = 10;
    std::size_t coords = 8;
    std::uint64_t seed = 5;
    GradCheckOptions tol{1e-6};
    // Probes drawn per requested coordinate before giving up on that instance.
    std::size_t max_draws_factor = 8;
};

namespace suite_detail {

inline void compare(SuiteEntry& e, double analytic, double numeric, const GradCheckOptions& tol) {
    const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
    const double abs_err = std::fabs(analytic - numeric);
    e.max_abs_error = std::max(e.max_abs_error, abs_err);
    if (scale < tol.tiny_grad) {
        if (abs_err >= tol.abs_tol) e.passed = false;
    } else {
        e.max_rel_error = std::max(e.max_rel_error, abs_err / scale);
        if (abs_err / scale >= tol.rel_tol) e.passed = false;
    }
    ++e.coords;
}

/// f0 = f(x), fu = f(x + h e_i), fd = f(x - h e_i). False when the two
/// one-sided slopes disagree beyond the tolerance (a kink inside the stencil).
inline bool smooth_probe(double f0, double fu, double fd, double h, const GradCheckOptions& tol) {
    const double fwd = (fu - f0) / h, bwd = (f0 - fd) / h;
    const double scale = std::max({std::fabs(fwd), std::fabs(bwd), tol.tiny_grad});
    return std::fabs(fwd - bwd) <= tol.rel_tol * scale;
}

/// Draws coordinates in [0, n) until `want` smooth probes have been compared.
/// `eval(i, delta)` is the loss with coordinate i shifted by delta.
template <class Eval>
void probe_coords(SuiteEntry& e, std::size_t n, std::size_t want, double f0, std::span<const double> analytic,
                  Eval&& eval, std::mt19937_64& rng, const NetworkGradcheckOptions& opt) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const double h = opt.tol.step;
    std::size_t done = 0;
    for (std::size_t draws = 0; done < want; ++draws) {
        if (draws == want * opt.max_draws_factor) {
            e.passed = false; // too many kinks to say anything
            return;
        }
        const std::size_t i = pick(rng);
        const double fu = eval(i, h), fd = eval(i, -h);
        if (!smooth_probe(f0, fu, fd, h, opt.tol)) {
            ++e.skipped;
            continue;
        }
        compare(e, analytic[i], (fu - fd) / (2 * h), opt.tol);
        ++done;
    }
}

} // namespace suite_detail

inline SuiteEntry gradcheck_generator(const NetworkScale& scale, const NetworkGradcheckOptions& opt = {}) {
    using namespace suite_detail;
    SuiteEntry e{"generator"};
    std::mt19937_64 rng(opt.seed);
    for (std::size_t inst = 0; inst < opt.instances; ++inst) {
        const Generator g = build_generator(scale, rng());
        const Tensor pan = uniform({1, 1, scale.spatial, scale.spatial}, rng);
        const Tensor ms = uniform({1, scale.bands, scale.ms_spatial(), scale.ms_spatial()}, rng);
        const Tensor w = uniform({1, scale.bands, scale.spatial, scale.spatial}, rng);
        auto loss_of = [&](const Generator& gen, const Tensor& p, const Tensor& m) {
            return sum(generator_forward(gen, p, m) * w);
        };

        Tape tape;
        BoundNetwork bg(tape, g.net, true);
        const Var vp = tape.parameter(pan), vm = tape.parameter(ms);
        const Var loss = sum(generator_forward(bg, scale, vp, vm) * tape.constant(w));
        const GradientMap grads = tape.backward(loss);
        const double f0 = loss_of(g, pan, ms);

        const ParamVector pv = flatten(g);
        probe_coords(
            e, pv.size(), opt.coords, f0, bg.gradient(grads),
            [&](std::size_t i, double delta) {
                ParamVector q = pv;
                q.values[i] += delta;
                return loss_of(unflatten_generator(q, scale), pan, ms);
            },
            rng, opt);
        probe_coords(
            e, pan.numel(), opt.coords / 2, f0, grads.at(vp.id()).data(),
            [&](std::size_t i, double delta) {
                Tensor q = pan;
                q[i] += delta;
                return loss_of(g, q, ms);
            },
            rng, opt);
        probe_coords(
            e, ms.numel(), opt.coords - opt.coords / 2, f0, grads.at(vm.id()).data(),
            [&](std::size_t i, double delta) {
                Tensor q = ms;
                q[i] += delta;
                return loss_of(g, pan, q);
            },
            rng, opt);
        ++e.instances;
    }
    return e;
}

inline SuiteEntry gradcheck_discriminator(const NetworkScale& scale, const NetworkGradcheckOptions& opt = {}) {
    using namespace suite_detail;
    SuiteEntry e{"discriminator"};
    std::mt19937_64 rng(opt.seed + 1);
    for (std::size_t inst = 0; inst < opt.instances; ++inst) {
        const Discriminator d = build_discriminator(scale, rng());
        const Tensor img = uniform({1, scale.bands, scale.spatial, scale.spatial}, rng);
        const Shape out_shape = discriminator_forward(d, img).shape();
        const Tensor w = uniform(out_shape, rng);
        auto loss_of = [&](const Discriminator& disc, const Tensor& x) { return sum(discriminator_forward(disc, x) * w); };

        Tape tape;
        BoundNetwork bd(tape, d.net, true);
        const Var vx = tape.parameter(img);
        const GradientMap grads = tape.backward(sum(discriminator_forward(bd, scale, vx) * tape.constant(w)));
        const double f0 = loss_of(d, img);

        const ParamVector pv = flatten(d);
        probe_coords(
            e, pv.size(), opt.coords, f0, bd.gradient(grads),
            [&](std::size_t i, double delta) {
                ParamVector q = pv;
                q.values[i] += delta;
                return loss_of(unflatten_discriminator(q, scale), img);
            },
            rng, opt);
        probe_coords(
            e, img.numel(), opt.coords, f0, grads.at(vx.id()).data(),
            [&](std::size_t i, double delta) {
                Tensor q = img;
                q[i] += delta;
                return loss_of(d, q);
            },
            rng, opt);
        ++e.instances;
    }
    return e;
}

/// Ops plus both networks at `scale`.
inline std::vector<SuiteEntry> run_full_gradcheck(const NetworkScale& scale, std::size_t instances = 10,
                                                  std::uint64_t seed = 1) {
    auto out = run_op_gradchecks(instances, seed);
    NetworkGradcheckOptions opt;
    opt.instances = instances;
    opt.seed = seed + 100;
    out.push_back(gradcheck_generator(scale, opt));
    out.push_back(gradcheck_discriminator(scale, opt));
    return out;
}

} // namespace bayesfuse
