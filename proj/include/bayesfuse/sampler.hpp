#pragma once

// Stochastic-gradient Langevin kernels on flat parameter vectors: plain SGLD
// and SGLD with an RMSprop-style diagonal preconditioner.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "networks.hpp"

namespace bayesfuse {

struct StepSchedule {
    enum class Mode { Constant, Polynomial, ConstantThenPolynomial };

    Mode mode = Mode::Constant;
    double a = 2e-4;
    double b = 0.0;
    double gamma = 0.55;
    // ConstantThenPolynomial: eps = a for t <= switch_step, then decays from a
    // continuously, i.e. a * ((b + switch_step) / (b + t))^gamma.
    std::size_t switch_step = 0;

    static StepSchedule constant(double eps) { return {Mode::Constant, eps, 0.0, 0.55, 0}; }
    static StepSchedule polynomial(double a, double b, double gamma) { return {Mode::Polynomial, a, b, gamma, 0}; }
    static StepSchedule constant_then_polynomial(double eps, std::size_t switch_step, double b = 1.0,
                                                 double gamma = 0.55) {
        return {Mode::ConstantThenPolynomial, eps, b, gamma, switch_step};
    }

    void validate() const {
        if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("StepSchedule: a must be positive, got " + std::to_string(a));
        if (mode == Mode::Constant) return;
        if (!(b >= 0.0)) throw ConfigError("StepSchedule: b must be >= 0, got " + std::to_string(b));
        if (!(gamma > 0.5 && gamma <= 1.0))
            throw ConfigError("StepSchedule: gamma must lie in (0.5, 1], got " + std::to_string(gamma));
        if (mode == Mode::ConstantThenPolynomial && b + static_cast<double>(switch_step) <= 0.0)
            throw ConfigError("StepSchedule: b + switch_step must be positive");
    }

    /// Step size at 1-based step t.
    double epsilon(std::size_t t) const {
        const double tt = static_cast<double>(t);
        switch (mode) {
        case Mode::Constant: return a;
        case Mode::Polynomial: return a * std::pow(b + tt, -gamma);
        case Mode::ConstantThenPolynomial:
            if (t <= switch_step) return a;
            return a * std::pow((b + static_cast<double>(switch_step)) / (b + tt), gamma);
        }
        return a;
    }
};

struct PriorSpec {
    double stddev = 1.0;
    void validate() const {
        if (!(stddev > 0.0) || !std::isfinite(stddev))
            throw ConfigError("PriorSpec: stddev must be positive, got " + std::to_string(stddev));
    }
};

struct PreconditionerState {
    std::vector<double> V;
    double alpha = 0.99;
    double lambda = 1e-5;
    bool gamma_term_enabled = false;
    // Last gradient and parameters, only kept for the curvature term.
    std::vector<double> prev_grad;
    std::vector<double> prev_theta;

    static PreconditionerState zeros(std::size_t n, double alpha = 0.99, double lambda = 1e-5) {
        PreconditionerState pc;
        pc.V.assign(n, 0.0);
        pc.alpha = alpha;
        pc.lambda = lambda;
        return pc;
    }

    void validate() const {
        if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("preconditioner alpha must lie in [0, 1)");
        if (!(lambda > 0.0)) throw ConfigError("preconditioner lambda must be positive");
    }

    double G(std::size_t i) const { return 1.0 / (lambda + std::sqrt(V[i])); }
    std::vector<double> G() const {
        std::vector<double> g(V.size());
        for (std::size_t i = 0; i < V.size(); ++i) g[i] = G(i);
        return g;
    }
};

struct SamplerState {
    ParamVector theta;
    std::size_t t = 0;
    PreconditionerState preconditioner;
    std::mt19937_64 rng;
    // Test hook: skip the injected Gaussian noise.
    bool zero_noise = false;

    SamplerState() = default;
    SamplerState(ParamVector init, std::uint64_t seed) : theta(std::move(init)), rng(seed) {
        preconditioner = PreconditionerState::zeros(theta.size());
    }
    SamplerState(std::vector<double> init, std::uint64_t seed) : SamplerState(ParamVector{std::move(init), {}}, seed) {}
};

namespace detail {
inline void require_length(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw ShapeError(std::string(what) + ": length " + std::to_string(got) + " does not match " +
                         std::to_string(want));
}
inline void require_finite(const std::vector<double>& v, const char* what, std::size_t step) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string(what) + ": non-finite gradient at step " + std::to_string(step));
}
} // namespace detail

/// -theta / std^2 + N * gbar, with gbar the minibatch-mean log-likelihood gradient.
inline std::vector<double> grad_log_posterior(const std::vector<double>& theta, const std::vector<double>& gbar,
                                              std::size_t dataset_size, const PriorSpec& prior) {
    detail::require_length(gbar.size(), theta.size(), "grad_log_posterior");
    const double inv_var = 1.0 / (prior.stddev * prior.stddev);
    const double n = static_cast<double>(dataset_size);
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = -theta[i] * inv_var + n * gbar[i];
    return out;
}

/// V <- alpha V + (1 - alpha) gbar^2. Also remembers gbar for the curvature term.
inline void precondition_update(PreconditionerState& pc, const std::vector<double>& gbar) {
    detail::require_length(gbar.size(), pc.V.size(), "precondition_update");
    for (std::size_t i = 0; i < gbar.size(); ++i) pc.V[i] = pc.alpha * pc.V[i] + (1.0 - pc.alpha) * gbar[i] * gbar[i];
}

/// Approximate Gamma_i = dG_i/dtheta_i. V's history is held fixed; only the
/// newest gradient's dependence is kept, and dg_i/dtheta_i is a secant
/// estimate from the previous step:
///   Gamma_i ~= -(1 - alpha) g_i (dg_i/dtheta_i) / (sqrt(V_i) (lambda + sqrt(V_i))^2)
/// Returns zeros when no history is available.
inline std::vector<double> approximate_gamma(const PreconditionerState& pc, const std::vector<double>& theta,
                                             const std::vector<double>& gbar) {
    std::vector<double> gamma(theta.size(), 0.0);
    if (pc.prev_grad.size() != theta.size() || pc.prev_theta.size() != theta.size()) return gamma;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double dtheta = theta[i] - pc.prev_theta[i];
        const double sv = std::sqrt(pc.V[i]);
        if (std::fabs(dtheta) < 1e-12 || sv == 0.0) continue;
        const double curvature = (gbar[i] - pc.prev_grad[i]) / dtheta;
        const double denom = pc.lambda + sv;
        gamma[i] = -(1.0 - pc.alpha) * gbar[i] * curvature / (sv * denom * denom);
    }
    return gamma;
}

/// theta += (eps/2) grad + N(0, eps I).
inline void sgld_step(SamplerState& s, const std::vector<double>& grad, const StepSchedule& schedule) {
    detail::require_length(grad.size(), s.theta.size(), "sgld_step");
    const std::size_t step = s.t + 1;
    detail::require_finite(grad, "sgld_step", step);
    const double eps = schedule.epsilon(step);
    const double half = eps / 2.0, noise_scale = std::sqrt(eps);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double xi = s.zero_noise ? 0.0 : normal(s.rng);
        s.theta.values[i] += half * grad[i] + noise_scale * xi;
    }
    s.t = step;
}

/// theta += (eps/2) (G grad + Gamma) + sqrt(G) N(0, eps I), with G from the
/// current preconditioner (update it with this step's gbar first). `gbar` is
/// only needed when the curvature term is enabled.
inline void psgld_step(SamplerState& s, const std::vector<double>& grad, const StepSchedule& schedule,
                       const std::vector<double>* gbar = nullptr) {
    auto& pc = s.preconditioner;
    detail::require_length(grad.size(), s.theta.size(), "psgld_step");
    detail::require_length(pc.V.size(), s.theta.size(), "psgld_step (preconditioner)");
    const std::size_t step = s.t + 1;
    detail::require_finite(grad, "psgld_step", step);
    const double eps = schedule.epsilon(step);
    const double half = eps / 2.0, noise_scale = std::sqrt(eps);

    std::vector<double> gamma;
    if (pc.gamma_term_enabled && gbar) {
        gamma = approximate_gamma(pc, s.theta.values, *gbar);
        pc.prev_grad = *gbar;
        pc.prev_theta = s.theta.values;
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = pc.G(i);
        const double drift = gamma.empty() ? g * grad[i] : g * grad[i] + gamma[i];
        const double xi = s.zero_noise ? 0.0 : normal(s.rng);
        s.theta.values[i] += half * drift + std::sqrt(g) * (noise_scale * xi);
    }
    s.t = step;
}

} // namespace bayesfuse
