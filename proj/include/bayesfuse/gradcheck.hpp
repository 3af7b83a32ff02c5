#pragma once

// Central finite-difference checks of reverse-mode gradients. Only the forward
// pass is used to build the numerical estimate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autograd.hpp"

namespace bayesfuse {

struct GradCheckOptions {
    double step = 1e-5;
    double rel_tol = 1e-4;
    // Below this gradient magnitude the comparison switches to absolute error.
    double tiny_grad = 1e-6;
    double abs_tol = 1e-2;
    // Coordinates probed per input; inputs smaller than this are checked exhaustively.
    std::size_t max_coords_per_input = 64;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::string name;
    std::size_t coords_checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = true;
};

/// Builds a scalar loss on `tape` from leaves created for each input tensor.
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

inline double evaluate_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    return build(tape, leaves).value().item();
}

/// Compares backward() against central differences for every (or a seeded
/// sample of) coordinate of every input in `check_inputs` (all when empty).
inline GradCheckResult check_gradients(const std::string& name, const LossBuilder& build,
                                       const std::vector<Tensor>& inputs, const GradCheckOptions& opt = {},
                                       std::vector<std::size_t> check_inputs = {}) {
    if (check_inputs.empty())
        for (std::size_t i = 0; i < inputs.size(); ++i) check_inputs.push_back(i);

    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.parameter(t));
    const Var loss = build(tape, leaves);
    const GradientMap grads = tape.backward(loss);

    GradCheckResult res;
    res.name = name;
    std::mt19937_64 rng(opt.seed);
    std::vector<Tensor> probe = inputs;
    for (std::size_t k : check_inputs) {
        const std::size_t n = inputs[k].numel();
        std::vector<std::size_t> coords(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        if (n > opt.max_coords_per_input) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_input);
        }
        const Tensor analytic = grads.contains(leaves[k].id()) ? grads.at(leaves[k].id()) : Tensor(inputs[k].shape());
        for (std::size_t c : coords) {
            const double orig = probe[k][c];
            probe[k][c] = orig + opt.step;
            const double up = evaluate_loss(build, probe);
            probe[k][c] = orig - opt.step;
            const double down = evaluate_loss(build, probe);
            probe[k][c] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic[c];
            const double scale = std::max(std::fabs(a), std::fabs(numeric));
            const double abs_err = std::fabs(a - numeric);
            res.max_abs_error = std::max(res.max_abs_error, abs_err);
            if (scale < opt.tiny_grad) {
                if (abs_err >= opt.abs_tol) res.passed = false;
            } else {
                const double rel = abs_err / scale;
                res.max_rel_error = std::max(res.max_rel_error, rel);
                if (rel >= opt.rel_tol) res.passed = false;
            }
            ++res.coords_checked;
        }
    }
    return res;
}

} // namespace bayesfuse
