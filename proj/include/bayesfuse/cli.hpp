#pragma once

// Command-line front end. Lives in a header so tests can drive it in-process.
// Exit codes: 0 success, 1 check failed (gradcheck), 2 bad config or usage,
// 3 I/O failure, 4 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "experiment.hpp"

namespace bayesfuse {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4 };

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"bayesfuse: Bayesian GAN pansharpening with preconditioned SGLD"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    app.add_option("--config", config_path, "experiment JSON; omitted keys take defaults")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "overrides both data.seed and train.seed");
    app.add_option("--out", out_dir, "overrides output.directory");
    app.add_option("--threads", threads, "worker threads for data generation and evaluation")
        ->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset into <out>/dataset");

    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "run the sampler and write losses, checkpoints and manifest");
    train_cmd->add_flag("--quiet", quiet, "no per-step progress");

    std::string checkpoint, pan, ms, fused_out, preview, dataset_dir;
    auto* fuse = app.add_subcommand("fuse", "fuse raw PAN/MS RSTF files with a generator checkpoint");
    fuse->add_option("--checkpoint", checkpoint, "generator .bgp file")->required()->check(CLI::ExistingFile);
    fuse->add_option("--pan", pan, "raw PAN, 1x1xSxS")->required()->check(CLI::ExistingFile);
    fuse->add_option("--ms", ms, "raw MS, 1xBxS/4xS/4")->required()->check(CLI::ExistingFile);
    fuse->add_option("--output", fused_out, "raw fused RSTF to write")->required();
    fuse->add_option("--preview", preview, "optional PPM preview of the first three bands");
    fuse->add_option("--dataset", dataset_dir, "dataset directory whose normalization the checkpoint was trained with")
        ->check(CLI::ExistingDirectory);

    std::string eval_fused, eval_ref;
    std::optional<std::size_t> uiqi_window, q4_block;
    auto* eval = app.add_subcommand("eval", "print metric CSV for a fused image against its reference");
    eval->add_option("--fused", eval_fused, "raw fused RSTF")->required()->check(CLI::ExistingFile);
    eval->add_option("--reference", eval_ref, "raw reference RSTF")->required()->check(CLI::ExistingFile);
    eval->add_option("--uiqi-window", uiqi_window, "sliding window for UIQI (global when omitted)");
    eval->add_option("--q4-block", q4_block, "block size for Q4 (global when omitted)");

    std::size_t gc_instances = 10;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference sweep over ops and both networks");
    gradcheck->add_option("--instances", gc_instances, "random instances per op / network")->check(CLI::PositiveNumber);

    std::size_t bench_samples = 200000;
    auto* bench = app.add_subcommand("sampler-bench", "SGLD / PSGLD runs on analytic posteriors");
    bench->add_option("--samples", bench_samples, "post-burn-in samples for the 1-D run")->check(CLI::PositiveNumber);

    auto* show = app.add_subcommand("config", "print the resolved configuration");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::Success& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitConfig;
    }

    try {
        ExperimentConfig cfg = config_path.empty() ? config_from_json(nlohmann::json::object()) : load_config(config_path);
        if (seed) cfg.data.seed = cfg.train.seed = *seed;
        if (!out_dir.empty()) cfg.output.directory = out_dir;
        cfg.validate();

        if (*show) {
            out << config_to_json(cfg).dump(2) << "\n";
        } else if (*synth) {
            const DatasetManifest m = cmd_synth(cfg, threads);
            out << "wrote " << m.scenes.size() << " scenes (" << m.train.size() << " train, " << m.test.size()
                << " test) to " << (std::filesystem::path(cfg.output.directory) / "dataset").string() << "\n";
        } else if (*train_cmd) {
            const TrainSummary s = cmd_train(cfg, threads, quiet ? nullptr : &out);
            const auto& best = s.result.samples[s.best_index];
            char buf[512];
            std::snprintf(buf, sizeof buf,
                          "samples %zu  best %zu (step %zu)  cc %.6f  sam %.4f deg\n"
                          "untrained cc %.6f  bicubic cc %.6f sam %.4f deg\n"
                          "posterior cc spread %.6f  best checksum %016llx\n",
                          s.result.samples.size(), s.best_index, best.step, best.validation.cc,
                          best.validation.sam_degrees, s.result.initial_validation.cc, s.result.bicubic_validation.cc,
                          s.result.bicubic_validation.sam_degrees, s.cc_spread,
                          static_cast<unsigned long long>(s.best_checksum));
            out << buf << "outputs in " << cfg.output.directory << "\n";
        } else if (*fuse) {
            NormalizationRecord norm;
            if (!dataset_dir.empty()) {
                DatasetManifest m;
                (void)load_dataset(dataset_dir, &m);
                norm = m.norm;
            }
            const Tensor f = cmd_fuse(checkpoint, pan, ms, cfg.data.scale, fused_out, preview, norm);
            out << "fused " << f.dim(1) << " bands " << f.dim(2) << "x" << f.dim(3) << " -> " << fused_out << "\n";
        } else if (*eval) {
            MetricParams p;
            p.ergas.l = static_cast<double>(cfg.data.scale.scale_ratio);
            p.uiqi_window = uiqi_window;
            p.q4_block = q4_block;
            out << cmd_eval(eval_fused, eval_ref, p);
        } else if (*gradcheck) {
            if (!cmd_gradcheck(out, cfg.data.scale, gc_instances, cfg.train.seed)) return kExitCheckFailed;
        } else if (*bench) {
            cmd_sampler_bench(out, bench_samples);
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    }
}

} // namespace bayesfuse
