#pragma once

// Bayesian GAN training: alternating preconditioned-SGLD updates of the
// generator and discriminator posteriors, posterior sample harvesting and
// best-by-CC selection.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "networks.hpp"
#include "parallel.hpp"
#include "sampler.hpp"

namespace bayesfuse {

// ------------------------------------------------------------------ losses

inline constexpr double kDefaultClampEps = 1e-7;

/// Mean absolute error over every element of the batch.
inline double l1_loss(const Tensor& fused, const Tensor& reference) {
    require_same_shape(fused, reference, "l1_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < fused.numel(); ++i) acc += std::fabs(fused[i] - reference[i]);
    return acc / static_cast<double>(fused.numel());
}
inline Var l1_loss(const Var& fused, const Var& reference) {
    require_same_shape(fused.value(), reference.value(), "l1_loss");
    return mean(abs(fused - reference));
}

/// mean log(1 - D(G)) + l1_weight * l1, with D clamped to [eps, 1 - eps].
/// The non-saturating variant uses -mean log D(G) instead.
inline double generator_loss(const Tensor& d_out_fake, double l1, double l1_weight,
                             double clamp_eps = kDefaultClampEps, bool non_saturating = false) {
    double acc = 0.0;
    for (double v : d_out_fake.values()) {
        const double c = std::clamp(v, clamp_eps, 1.0 - clamp_eps);
        acc += non_saturating ? -std::log(c) : std::log(1.0 - c);
    }
    return acc / static_cast<double>(d_out_fake.numel()) + l1_weight * l1;
}

/// -mean log D(real) - mean log(1 - D(fake)).
inline double discriminator_loss(const Tensor& d_out_real, const Tensor& d_out_fake,
                                 double clamp_eps = kDefaultClampEps) {
    double r = 0.0, f = 0.0;
    for (double v : d_out_real.values()) r -= std::log(std::clamp(v, clamp_eps, 1.0 - clamp_eps));
    for (double v : d_out_fake.values()) f -= std::log(1.0 - std::clamp(v, clamp_eps, 1.0 - clamp_eps));
    return r / static_cast<double>(d_out_real.numel()) + f / static_cast<double>(d_out_fake.numel());
}

// ------------------------------------------------------------------ configuration

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 16;
    std::size_t epochs = 100;
    std::size_t burn_in = 500;
    std::size_t thin = 10;
    std::size_t n_posterior_samples = 50;
    double prior_std_g = 1.0;
    double prior_std_d = 1.0;
    double precond_alpha = 0.99;
    double precond_lambda = 1e-5;
    bool gamma_term = false;
    // Seed V with the first squared gradient instead of zeros, so the first
    // steps are not inflated by an empty second-moment estimate.
    bool warm_start_preconditioner = true;
    // Harvest-phase decay: eps_t = 2 lr ((b + burn_in) / (b + t))^gamma.
    double decay_b = 1.0;
    double decay_gamma = 0.55;
    std::uint64_t seed = 0;
    double l1_weight = 1.0;
    double clamp_eps = kDefaultClampEps;
    // -log D(G) instead of log(1 - D(G)) for the generator's adversarial term.
    bool non_saturating = false;
    bool harvest_discriminator = false;
    std::size_t validation_scenes = 8;
    // Worker threads for validation forward passes; results do not depend on it.
    std::size_t eval_threads = 1;
    // Test hooks.
    bool zero_noise = false;
    bool freeze_parameters = false;

    // How the learning rate maps to the Langevin step size eps. Minibatch:
    // lr multiplies the preconditioned gradient of the minibatch log-likelihood
    // sum, eps = 2 lr n / N. FullGradient: eps = 2 lr, so lr multiplies the
    // full N-scaled posterior gradient.
    enum class StepScale { Minibatch, FullGradient };
    StepScale step_scale = StepScale::Minibatch;

    double epsilon0(std::size_t n_train) const {
        if (step_scale == StepScale::FullGradient) return 2.0 * learning_rate;
        return 2.0 * learning_rate * static_cast<double>(std::min(batch_size, n_train)) /
               static_cast<double>(n_train);
    }

    StepSchedule schedule(std::size_t n_train) const {
        return StepSchedule::constant_then_polynomial(epsilon0(n_train), burn_in, decay_b, decay_gamma);
    }

    std::size_t steps_per_epoch(std::size_t n_train) const { return (n_train + batch_size - 1) / batch_size; }
    std::size_t total_steps(std::size_t n_train) const { return epochs * steps_per_epoch(n_train); }
    std::size_t harvest_steps() const { return burn_in + thin * n_posterior_samples; }

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
        if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
        if (epochs == 0) throw ConfigError("train.epochs must be positive");
        if (thin == 0) throw ConfigError("train.thin must be positive");
        if (n_posterior_samples == 0) throw ConfigError("train.n_posterior_samples must be at least 1");
        PriorSpec{prior_std_g}.validate();
        PriorSpec{prior_std_d}.validate();
        PreconditionerState pc;
        pc.alpha = precond_alpha;
        pc.lambda = precond_lambda;
        pc.validate();
        schedule(batch_size).validate();
        if (!(l1_weight >= 0.0)) throw ConfigError("train.l1_weight must be nonnegative");
        if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("train.clamp_eps must lie in (0, 0.5)");
        if (validation_scenes == 0) throw ConfigError("train.validation_scenes must be positive");
    }

    /// Throws when the epochs cannot cover burn-in plus the harvest.
    void validate_for(std::size_t n_train) const {
        validate();
        if (n_train == 0) throw ConfigError("training set is empty");
        if (harvest_steps() > total_steps(n_train))
            throw ConfigError("train: burn_in + thin * n_posterior_samples = " + std::to_string(harvest_steps()) +
                              " exceeds the " + std::to_string(total_steps(n_train)) + " steps of " +
                              std::to_string(epochs) + " epochs x " + std::to_string(steps_per_epoch(n_train)) +
                              " steps");
    }
};

struct LossReport {
    std::size_t step = 0;
    double l1 = 0, adversarial_g = 0, total_g = 0;
    double d_real = 0, d_fake = 0, total_d = 0;
    double epsilon = 0;

    static std::string csv_header() { return "step,l1,adv_g,total_g,d_real,d_fake,total_d,epsilon_t"; }
    std::string csv_row() const {
        char buf[320];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", step, l1, adversarial_g,
                      total_g, d_real, d_fake, total_d, epsilon);
        return buf;
    }
};

struct PosteriorSample {
    ParamVector generator;
    std::optional<ParamVector> discriminator;
    std::size_t step = 0;
    MetricReport validation;
};

struct TrainResult {
    std::vector<PosteriorSample> samples;
    std::vector<LossReport> losses;
    MetricReport initial_validation; // untrained generator on the same subset
    MetricReport bicubic_validation; // bicubic-upsampled MS on the same subset
    std::vector<std::string> validation_ids;
};

// ------------------------------------------------------------------ helpers

struct SceneBatch {
    Tensor pan, ms, reference;
};

inline SceneBatch stack_scenes(const std::vector<Scene>& scenes, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> p, m, r;
    for (auto i : idx) {
        p.push_back(scenes.at(i).pan);
        m.push_back(scenes.at(i).ms);
        r.push_back(scenes.at(i).reference);
    }
    return {batch_stack(p), batch_stack(m), batch_stack(r)};
}

/// Fixed, seeded subset of at most `count` scenes.
inline std::vector<Scene> validation_subset(const std::vector<Scene>& pool, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, idx.size()));
    std::sort(idx.begin(), idx.end());
    std::vector<Scene> out;
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

/// Fused output in network range for every scene, one scene per task.
inline Tensor fuse_scenes(const Generator& g, const std::vector<Scene>& scenes, std::size_t threads = 1) {
    std::vector<Tensor> outs(scenes.size());
    parallel_for(scenes.size(), threads,
                 [&](std::size_t i) { outs[i] = generator_forward(g, scenes[i].pan, scenes[i].ms); });
    return batch_stack(outs);
}

inline MetricReport nan_report() {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, nan, nan};
}

/// Metrics on de-normalized (raw) values, averaged over scenes.
inline MetricReport evaluate_generator(const Generator& g, const std::vector<Scene>& scenes,
                                       const MetricParams& params = {}, std::size_t threads = 1) {
    if (scenes.empty()) throw ConfigError("evaluate_generator: no validation scenes");
    std::vector<Tensor> refs;
    for (const auto& s : scenes) refs.push_back(s.norm.denormalize(s.reference));
    const Tensor fused = scenes.front().norm.denormalize(fuse_scenes(g, scenes, threads));
    return evaluate_all(fused, batch_stack(refs), params);
}

/// Bicubic-upsampled MS against the reference, in raw values.
inline MetricReport evaluate_bicubic(const std::vector<Scene>& scenes, std::size_t ratio = 4,
                                     const MetricParams& params = {}) {
    std::vector<Tensor> ups, refs;
    for (const auto& s : scenes) {
        ups.push_back(s.norm.denormalize(bicubic_upsample(s.ms, ratio)));
        refs.push_back(s.norm.denormalize(s.reference));
    }
    return evaluate_all(batch_stack(ups), batch_stack(refs), params);
}

/// FNV-1a over the little-endian bytes of every value.
inline std::uint64_t checksum(const ParamVector& pv) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : pv.values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 1099511628211ull;
        }
    }
    return h;
}

/// Index of the highest validation CC; ties go to the latest sample. Samples
/// whose metrics could not be computed (NaN) only win when all are NaN.
inline std::size_t select_best_index(const std::vector<PosteriorSample>& samples) {
    if (samples.empty()) throw ConfigError("select_best: empty posterior sample set");
    std::size_t best = samples.size() - 1;
    bool found = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double c = samples[i].validation.cc;
        if (std::isnan(c)) continue;
        if (!found || c >= samples[best].validation.cc) best = i;
        found = true;
    }
    return best;
}

inline const ParamVector& select_best(const std::vector<PosteriorSample>& samples) {
    return samples[select_best_index(samples)].generator;
}

// ------------------------------------------------------------------ one step

struct StepLosses {
    LossReport report;
    std::vector<double> grad_g; // d total_g / d theta_g
    std::vector<double> grad_d; // d total_d / d theta_d
};

/// Losses and parameter gradients for one minibatch. The generator gradient
/// treats the discriminator as fixed; the discriminator sees the fake images
/// produced by the generator before its update.
inline StepLosses compute_step(const Generator& g, const Discriminator& d, const SceneBatch& batch,
                               const TrainConfig& cfg) {
    StepLosses out;
    const double eps = cfg.clamp_eps;
    Tensor fake_value;
    {
        Tape tape;
        BoundNetwork bg(tape, g.net, true), bd(tape, d.net, false);
        const Var fake = generator_forward(bg, g.scale, tape.constant(batch.pan), tape.constant(batch.ms));
        const Var l1 = l1_loss(fake, tape.constant(batch.reference));
        const Var dfake = clamp(discriminator_forward(bd, d.scale, fake), eps, 1.0 - eps);
        const Var adv = cfg.non_saturating ? mul_scalar(mean(log(dfake)), -1.0) : mean(log(1.0 - dfake));
        const Var total = adv + l1 * cfg.l1_weight;
        out.report.l1 = l1.value().item();
        out.report.adversarial_g = adv.value().item();
        out.report.total_g = total.value().item();
        fake_value = fake.value();
        out.grad_g = bg.gradient(tape.backward(total));
    }
    {
        Tape tape;
        BoundNetwork bd(tape, d.net, true);
        const Var real = clamp(discriminator_forward(bd, d.scale, tape.constant(batch.reference)), eps, 1.0 - eps);
        const Var fake = clamp(discriminator_forward(bd, d.scale, tape.constant(fake_value)), eps, 1.0 - eps);
        const Var d_real = mul_scalar(mean(log(real)), -1.0);
        const Var d_fake = mul_scalar(mean(log(1.0 - fake)), -1.0);
        const Var total = d_real + d_fake;
        out.report.d_real = d_real.value().item();
        out.report.d_fake = d_fake.value().item();
        out.report.total_d = total.value().item();
        out.grad_d = bd.gradient(tape.backward(total));
    }
    return out;
}

// ------------------------------------------------------------------ training loop

struct TrainHooks {
    std::function<void(const LossReport&)> on_step;
    std::function<void(const PosteriorSample&, std::size_t index)> on_sample;
};

/// Seeds for every random stream, drawn in a fixed order from cfg.seed.
struct TrainSeeds {
    std::uint64_t generator_init, discriminator_init, batches, noise_g, noise_d, validation;
    explicit TrainSeeds(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        generator_init = rng();
        discriminator_init = rng();
        batches = rng();
        noise_g = rng();
        noise_d = rng();
        validation = rng();
    }
};

inline TrainResult train(const TrainConfig& cfg, const NetworkScale& scale, const std::vector<Scene>& train_set,
                         const std::vector<Scene>& validation_pool, const TrainHooks& hooks = {}) {
    cfg.validate_for(train_set.size());
    if (validation_pool.empty()) throw ConfigError("train: validation pool is empty");
    const TrainSeeds seeds(cfg.seed);
    const std::vector<Scene> validation = validation_subset(validation_pool, cfg.validation_scenes, seeds.validation);

    Generator g = build_generator(scale, seeds.generator_init);
    Discriminator d = build_discriminator(scale, seeds.discriminator_init);

    auto make_state = [&](const ParamVector& init, std::uint64_t seed) {
        SamplerState s(init, seed);
        s.preconditioner = PreconditionerState::zeros(init.size(), cfg.precond_alpha, cfg.precond_lambda);
        s.preconditioner.gamma_term_enabled = cfg.gamma_term;
        s.zero_noise = cfg.zero_noise;
        return s;
    };
    SamplerState sg = make_state(flatten(g), seeds.noise_g);
    SamplerState sd = make_state(flatten(d), seeds.noise_d);
    const StepSchedule schedule = cfg.schedule(train_set.size());
    const PriorSpec prior_g{cfg.prior_std_g}, prior_d{cfg.prior_std_d};
    const std::size_t N = train_set.size();

    TrainResult result;
    result.initial_validation = evaluate_generator(g, validation, {}, cfg.eval_threads);
    result.bicubic_validation = evaluate_bicubic(validation, scale.scale_ratio);
    for (const auto& s : validation) result.validation_ids.push_back(s.id);

    std::mt19937_64 batch_rng(seeds.batches);
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;

    auto negate = [](std::vector<double> v) {
        for (auto& x : v) x = -x;
        return v;
    };
    // The preconditioner sees the per-scene share of the posterior gradient,
    // (grad log prior) / N + gbar. With gbar alone, a weight whose likelihood
    // gradient vanishes (e.g. behind a saturated, clamped discriminator) gets
    // G -> 1/lambda and the prior drift blows up.
    auto sampler_update = [&](SamplerState& s, const std::vector<double>& loss_grad, const PriorSpec& prior) {
        const std::vector<double> gbar = negate(loss_grad); // uphill in log-likelihood
        const std::vector<double> grad = grad_log_posterior(s.theta.values, gbar, N, prior);
        std::vector<double> share(grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) share[i] = grad[i] / static_cast<double>(N);
        if (s.t == 0 && cfg.warm_start_preconditioner)
            for (std::size_t i = 0; i < share.size(); ++i) s.preconditioner.V[i] = share[i] * share[i];
        precondition_update(s.preconditioner, share);
        if (cfg.freeze_parameters) {
            ++s.t;
            return;
        }
        psgld_step(s, grad, schedule, cfg.gamma_term ? &share : nullptr);
    };

    const std::size_t steps_per_epoch = cfg.steps_per_epoch(N);
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        for (std::size_t k = 0; k < steps_per_epoch; ++k) {
            ++t;
            const std::size_t lo = k * cfg.batch_size, hi = std::min(N, lo + cfg.batch_size);
            const SceneBatch batch =
                stack_scenes(train_set, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                                                 order.begin() + static_cast<std::ptrdiff_t>(hi)));
            StepLosses sl;
            try {
                sl = compute_step(g, d, batch, cfg);
            } catch (const NumericError& e) {
                throw NumericError("train: step " + std::to_string(t) + ": " + e.what());
            }
            sl.report.step = t;
            sl.report.epsilon = schedule.epsilon(t);
            for (double v : {sl.report.l1, sl.report.total_g, sl.report.total_d})
                if (!std::isfinite(v)) throw NumericError("train: non-finite loss at step " + std::to_string(t));

            sampler_update(sg, sl.grad_g, prior_g);
            sampler_update(sd, sl.grad_d, prior_d);
            g.net.load(sg.theta);
            d.net.load(sd.theta);

            result.losses.push_back(sl.report);
            if (hooks.on_step) hooks.on_step(sl.report);

            if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
                PosteriorSample ps;
                ps.generator = sg.theta;
                if (cfg.harvest_discriminator) ps.discriminator = sd.theta;
                ps.step = t;
                try {
                    ps.validation = evaluate_generator(g, validation, {}, cfg.eval_threads);
                } catch (const NumericError&) {
                    ps.validation = nan_report(); // e.g. a saturated, constant output band
                }
                result.samples.push_back(std::move(ps));
                if (hooks.on_sample) hooks.on_sample(result.samples.back(), result.samples.size() - 1);
                if (result.samples.size() == cfg.n_posterior_samples) return result;
            }
        }
    }
    return result; // unreachable after validate_for, kept for clarity
}

// ------------------------------------------------------------------ outputs

inline void write_loss_csv(const std::vector<LossReport>& losses, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << LossReport::csv_header() << "\n";
    for (const auto& l : losses) os << l.csv_row() << "\n";
    if (!os) throw IoError("write failed for " + path);
}

inline std::string sample_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%03zu.bgp", index);
    return buf;
}

/// Checkpoints, loss trace and a manifest of every posterior sample.
inline nlohmann::json write_training_outputs(const TrainResult& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_loss_csv(r.losses, (fs::path(dir) / "losses.csv").string());
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        const auto& s = r.samples[i];
        save_checkpoint(s.generator, (fs::path(dir) / sample_filename(i)).string());
        nlohmann::json e = {{"index", i},
                            {"step", s.step},
                            {"file", sample_filename(i)},
                            {"checksum", checksum(s.generator)},
                            {"cc", s.validation.cc},
                            {"uiqi", s.validation.uiqi},
                            {"sam_deg", s.validation.sam_degrees},
                            {"ergas", s.validation.ergas},
                            {"q4", s.validation.q4}};
        if (s.discriminator) {
            const std::string dname = "disc_" + sample_filename(i);
            save_checkpoint(*s.discriminator, (fs::path(dir) / dname).string());
            e["discriminator_file"] = dname;
        }
        samples.push_back(e);
    }
    const std::size_t best = select_best_index(r.samples);
    nlohmann::json m = {{"samples", samples},
                        {"best_index", best},
                        {"best_file", sample_filename(best)},
                        {"best_checksum", checksum(r.samples[best].generator)},
                        {"initial_cc", r.initial_validation.cc},
                        {"bicubic_cc", r.bicubic_validation.cc},
                        {"bicubic_sam_deg", r.bicubic_validation.sam_degrees},
                        {"validation_scenes", r.validation_ids}};
    std::ofstream os(fs::path(dir) / "posterior_manifest.json");
    if (!os) throw IoError("cannot write posterior manifest in " + dir);
    os << m.dump(2) << "\n";
    return m;
}

} // namespace bayesfuse
