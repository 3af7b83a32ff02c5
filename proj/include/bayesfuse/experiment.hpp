#pragma once

// Experiment configuration (one JSON document) and the commands behind the
// CLI: synth, train, fuse, eval, gradcheck, sampler-bench.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "bayesian_gan.hpp"
#include "data.hpp"
#include "gradcheck_suite.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "sampler_bench.hpp"

namespace bayesfuse {

struct ExperimentConfig {
    struct Data {
        std::uint64_t seed = 1;
        std::size_t n_scenes = 200;
        NetworkScale scale = NetworkScale::desk();
        SynthParams synth;
        double train_fraction = 0.8;
        // When set, scenes are loaded from this dataset directory instead of synthesized.
        std::string directory;
    } data;
    TrainConfig train;
    struct Output {
        std::string directory = "run";
    } output;

    void validate() const {
        if (data.n_scenes == 0) throw ConfigError("data.n_scenes must be positive");
        data.scale.validate();
        data.synth.validate(data.scale.bands);
        if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
            throw ConfigError("data.train_fraction must lie in (0, 1) so both splits are nonempty");
        train.validate();
        if (output.directory.empty()) throw ConfigError("output.directory must not be empty");
    }
};

namespace config_detail {

/// Rejects keys outside `allowed`, naming the section.
inline void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("config: unknown key '" + section + "." + k + "'");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& dst, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
    }
}

inline const char* step_scale_name(TrainConfig::StepScale s) {
    return s == TrainConfig::StepScale::Minibatch ? "minibatch" : "full_gradient";
}

} // namespace config_detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using namespace config_detail;
    ExperimentConfig c;
    check_keys(j, "<root>", {"data", "train", "sampler", "output"});
    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d, "data", {"seed", "n_scenes", "scale", "synth", "train_fraction", "directory"});
        read(d, "seed", c.data.seed, "data");
        read(d, "n_scenes", c.data.n_scenes, "data");
        read(d, "train_fraction", c.data.train_fraction, "data");
        read(d, "directory", c.data.directory, "data");
        if (d.contains("scale")) {
            const auto& s = d["scale"];
            check_keys(s, "data.scale", {"spatial", "bands", "width_divisor", "scale_ratio"});
            read(s, "spatial", c.data.scale.spatial, "data.scale");
            read(s, "bands", c.data.scale.bands, "data.scale");
            read(s, "width_divisor", c.data.scale.width_divisor, "data.scale");
            read(s, "scale_ratio", c.data.scale.scale_ratio, "data.scale");
        }
        if (d.contains("synth")) {
            const auto& s = d["synth"];
            check_keys(s, "data.synth",
                       {"band_weights", "low_components", "edges", "texture_components", "detail_amplitude",
                        "spectral_spread"});
            read(s, "band_weights", c.data.synth.band_weights, "data.synth");
            read(s, "low_components", c.data.synth.low_components, "data.synth");
            read(s, "edges", c.data.synth.edges, "data.synth");
            read(s, "texture_components", c.data.synth.texture_components, "data.synth");
            read(s, "detail_amplitude", c.data.synth.detail_amplitude, "data.synth");
            read(s, "spectral_spread", c.data.synth.spectral_spread, "data.synth");
        }
        // Uniform PAN weights follow the band count unless given explicitly.
        if (!(d.contains("synth") && d["synth"].contains("band_weights")))
            c.data.synth.band_weights.assign(c.data.scale.bands, 1.0 / static_cast<double>(c.data.scale.bands));
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, "train",
                   {"learning_rate", "batch_size", "epochs", "burn_in", "thin", "n_posterior_samples", "seed",
                    "l1_weight", "clamp_eps", "non_saturating", "harvest_discriminator", "validation_scenes",
                    "eval_threads"});
        read(t, "learning_rate", c.train.learning_rate, "train");
        read(t, "batch_size", c.train.batch_size, "train");
        read(t, "epochs", c.train.epochs, "train");
        read(t, "burn_in", c.train.burn_in, "train");
        read(t, "thin", c.train.thin, "train");
        read(t, "n_posterior_samples", c.train.n_posterior_samples, "train");
        read(t, "seed", c.train.seed, "train");
        read(t, "l1_weight", c.train.l1_weight, "train");
        read(t, "clamp_eps", c.train.clamp_eps, "train");
        read(t, "non_saturating", c.train.non_saturating, "train");
        read(t, "harvest_discriminator", c.train.harvest_discriminator, "train");
        read(t, "validation_scenes", c.train.validation_scenes, "train");
        read(t, "eval_threads", c.train.eval_threads, "train");
    }
    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        check_keys(s, "sampler", {"schedule", "preconditioner", "priors"});
        if (s.contains("schedule")) {
            const auto& sc = s["schedule"];
            check_keys(sc, "sampler.schedule", {"step_scale", "decay_b", "decay_gamma"});
            read(sc, "decay_b", c.train.decay_b, "sampler.schedule");
            read(sc, "decay_gamma", c.train.decay_gamma, "sampler.schedule");
            if (sc.contains("step_scale")) {
                std::string v;
                read(sc, "step_scale", v, "sampler.schedule");
                if (v == "minibatch") c.train.step_scale = TrainConfig::StepScale::Minibatch;
                else if (v == "full_gradient") c.train.step_scale = TrainConfig::StepScale::FullGradient;
                else throw ConfigError("config: sampler.schedule.step_scale must be 'minibatch' or 'full_gradient'");
            }
        }
        if (s.contains("preconditioner")) {
            const auto& p = s["preconditioner"];
            check_keys(p, "sampler.preconditioner", {"alpha", "lambda", "gamma_term", "warm_start"});
            read(p, "alpha", c.train.precond_alpha, "sampler.preconditioner");
            read(p, "lambda", c.train.precond_lambda, "sampler.preconditioner");
            read(p, "gamma_term", c.train.gamma_term, "sampler.preconditioner");
            read(p, "warm_start", c.train.warm_start_preconditioner, "sampler.preconditioner");
        }
        if (s.contains("priors")) {
            const auto& p = s["priors"];
            check_keys(p, "sampler.priors", {"generator_std", "discriminator_std"});
            read(p, "generator_std", c.train.prior_std_g, "sampler.priors");
            read(p, "discriminator_std", c.train.prior_std_d, "sampler.priors");
        }
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        check_keys(o, "output", {"directory"});
        read(o, "directory", c.output.directory, "output");
    }
    c.validate();
    return c;
}

/// Every field, defaults included; feeding it back yields the same config.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& t = c.train;
    return {{"data",
             {{"seed", c.data.seed},
              {"n_scenes", c.data.n_scenes},
              {"scale", c.data.scale},
              {"synth",
               {{"band_weights", c.data.synth.band_weights},
                {"low_components", c.data.synth.low_components},
                {"edges", c.data.synth.edges},
                {"texture_components", c.data.synth.texture_components},
                {"detail_amplitude", c.data.synth.detail_amplitude},
                {"spectral_spread", c.data.synth.spectral_spread}}},
              {"train_fraction", c.data.train_fraction},
              {"directory", c.data.directory}}},
            {"train",
             {{"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"burn_in", t.burn_in},
              {"thin", t.thin},
              {"n_posterior_samples", t.n_posterior_samples},
              {"seed", t.seed},
              {"l1_weight", t.l1_weight},
              {"clamp_eps", t.clamp_eps},
              {"non_saturating", t.non_saturating},
              {"harvest_discriminator", t.harvest_discriminator},
              {"validation_scenes", t.validation_scenes},
              {"eval_threads", t.eval_threads}}},
            {"sampler",
             {{"schedule",
               {{"step_scale", config_detail::step_scale_name(t.step_scale)},
                {"decay_b", t.decay_b},
                {"decay_gamma", t.decay_gamma}}},
              {"preconditioner",
               {{"alpha", t.precond_alpha},
                {"lambda", t.precond_lambda},
                {"gamma_term", t.gamma_term},
                {"warm_start", t.warm_start_preconditioner}}},
              {"priors", {{"generator_std", t.prior_std_g}, {"discriminator_std", t.prior_std_d}}}}},
            {"output", {{"directory", c.output.directory}}}};
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

// ------------------------------------------------------------------ commands

/// Synthesizes the configured dataset into <out>/dataset.
inline DatasetManifest cmd_synth(const ExperimentConfig& c, std::size_t threads = 1) {
    c.validate();
    namespace fs = std::filesystem;
    DatasetManifest m;
    const Dataset ds = generate_dataset(c.data.seed, c.data.n_scenes, c.data.scale, c.data.synth,
                                        c.data.train_fraction, &m, threads);
    const fs::path dir = fs::path(c.output.directory) / "dataset";
    write_dataset(ds, m, dir.string());
    write_json(config_to_json(c), fs::path(c.output.directory) / "resolved_config.json");
    return m;
}

inline Dataset obtain_dataset(const ExperimentConfig& c, std::size_t threads = 1) {
    if (!c.data.directory.empty()) {
        Dataset ds = load_dataset(c.data.directory);
        if (!(ds.scale == c.data.scale))
            throw ConfigError("dataset in " + c.data.directory + " was built for a different data.scale");
        return ds;
    }
    return generate_dataset(c.data.seed, c.data.n_scenes, c.data.scale, c.data.synth, c.data.train_fraction, nullptr,
                            threads);
}

struct TrainSummary {
    TrainResult result;
    std::size_t best_index = 0;
    std::uint64_t best_checksum = 0;
    double cc_spread = 0.0; // max - min validation CC over the samples
    nlohmann::json manifest;
};

/// Trains on the configured dataset and writes losses, checkpoints, the
/// posterior manifest and the resolved config into the output directory.
/// Config problems (including a harvest plan longer than the epochs) are
/// raised before the first step.
inline TrainSummary cmd_train(const ExperimentConfig& c, std::size_t threads = 1, std::ostream* log = nullptr) {
    c.validate();
    namespace fs = std::filesystem;
    const Dataset ds = obtain_dataset(c, threads);
    const auto train_set = ds.train_scenes();
    c.train.validate_for(train_set.size());
    write_json(config_to_json(c), fs::path(c.output.directory) / "resolved_config.json");

    TrainConfig tc = c.train;
    tc.eval_threads = std::max(tc.eval_threads, threads);
    TrainHooks hooks;
    if (log) {
        hooks.on_step = [log](const LossReport& l) {
            if (l.step % 10 == 0) *log << "step " << l.step << " l1 " << l.l1 << " total_d " << l.total_d << "\n";
        };
        hooks.on_sample = [log](const PosteriorSample& s, std::size_t i) {
            *log << "sample " << i << " step " << s.step << " cc " << s.validation.cc << " sam "
                 << s.validation.sam_degrees << "\n";
        };
    }
    TrainSummary out;
    out.result = train(tc, ds.scale, train_set, ds.test_scenes(), hooks);
    out.manifest = write_training_outputs(out.result, c.output.directory);
    out.best_index = select_best_index(out.result.samples);
    out.best_checksum = checksum(out.result.samples[out.best_index].generator);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : out.result.samples)
        if (!std::isnan(s.validation.cc)) lo = std::min(lo, s.validation.cc), hi = std::max(hi, s.validation.cc);
    out.cc_spread = hi >= lo ? hi - lo : 0.0;
    return out;
}

/// Fuses raw-domain PAN/MS files with a generator checkpoint; writes the raw
/// fused image and optionally a PPM preview of its first three bands.
inline Tensor cmd_fuse(const std::string& checkpoint, const std::string& pan_path, const std::string& ms_path,
                       const NetworkScale& scale, const std::string& out_path, const std::string& preview_path = "",
                       const NormalizationRecord& norm = {}) {
    const Generator g = unflatten_generator(load_checkpoint(checkpoint), scale);
    const Tensor pan = norm.normalize(load_rstf(pan_path)), ms = norm.normalize(load_rstf(ms_path));
    const Tensor fused = norm.denormalize(generator_forward(g, pan, ms));
    if (!out_path.empty()) save_rstf(fused, out_path);
    if (!preview_path.empty()) export_preview(fused, preview_path, norm.min, norm.max);
    return fused;
}

/// Metric CSV (header + one row) for a raw fused image against its reference.
inline std::string cmd_eval(const std::string& fused_path, const std::string& reference_path,
                            const MetricParams& params = {}) {
    const MetricReport r = evaluate_all(load_rstf(fused_path), load_rstf(reference_path), params);
    return MetricReport::csv_header() + "\n" + r.csv_row() + "\n";
}

/// One line per op / network, then an overall verdict. Returns true when all pass.
inline bool cmd_gradcheck(std::ostream& os, const NetworkScale& scale = NetworkScale::desk(),
                          std::size_t instances = 10, std::uint64_t seed = 1) {
    bool ok = true;
    for (const auto& e : run_full_gradcheck(scale, instances, seed)) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-18s %s  instances=%zu coords=%zu skipped=%zu max_rel=%.3e max_abs=%.3e", e.name.c_str(),
                      e.passed ? "PASS" : "FAIL", e.instances, e.coords, e.skipped, e.max_rel_error, e.max_abs_error);
        os << buf << "\n";
        ok = ok && e.passed;
    }
    os << (ok ? "gradcheck: all passed" : "gradcheck: FAILURES") << "\n";
    return ok;
}

/// Moments of SGLD on the conjugate Gaussian, the G = I reduction check and
/// the anisotropic settle-time comparison, as plain text.
inline void cmd_sampler_bench(std::ostream& os, std::size_t samples = 200000) {
    const auto m = GaussianMeanModel::make();
    const double prec = 1.0 / (m.prior.stddev * m.prior.stddev) + static_cast<double>(m.data.size()) / m.lik_var;
    const double target_mean = std::accumulate(m.data.begin(), m.data.end(), 0.0) / m.lik_var / prec;
    OneDimBenchOptions opt;
    opt.samples = samples;
    const auto r = sgld_gaussian_moments(m, opt);
    os << "sgld_1d: samples=" << r.samples << " mean=" << r.mean << " (target " << target_mean
       << ") variance=" << r.variance << " (target " << 1.0 / prec << ")\n";
    os << "psgld_identity_bitwise: " << (psgld_identity_matches_sgld() ? "yes" : "no") << "\n";
    const auto c = compare_on_anisotropic(AnisotropicModel::make());
    os << "anisotropic_settle_steps: sgld=" << c.best_sgld << " (eps " << c.best_sgld_eps << ") psgld=" << c.best_psgld
       << " (eps " << c.best_psgld_eps << ") cap=" << c.cap << "\n";
}

} // namespace bayesfuse
