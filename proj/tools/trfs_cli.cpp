// trfs: few-shot segmentation desk-scale pipeline.
// Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 IO error.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "trfs/config.hpp"
#include "trfs/eval.hpp"
#include "trfs/golden.hpp"
#include "trfs/net.hpp"

namespace {

using namespace trfs;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

// Hierarchical RNG split: independent streams so e.g. changing the episode
// count never perturbs initialization.
constexpr std::uint64_t kDataStream = 0xD47A;
constexpr std::uint64_t kBackboneStream = 0xB8B0;
constexpr std::uint64_t kParamStream = 0x9A7A;
constexpr std::uint64_t kTrainStream = 0x7A19;

RunConfig make_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_config_file(config_path);
    for (const std::string& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

void write_config_stamp(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream f(cfg.out_dir + "/config.txt");
    if (!f) throw IoError("cannot write " + cfg.out_dir + "/config.txt");
    f << cfg.canonical_text() << "fingerprint=" << cfg.fingerprint() << "\n";
    if (!f) throw IoError("config stamp write failed");
}

int cmd_gen_data(const RunConfig& cfg) {
    const auto folds = make_folds();
    const FoldSplit& split = folds[cfg.fold];
    const std::string dir = cfg.out_dir + "/data";
    std::filesystem::create_directories(dir);
    write_config_stamp(cfg);

    std::ofstream index(dir + "/index.txt");
    if (!index) throw IoError("cannot write " + dir + "/index.txt");
    index << "fingerprint " << cfg.fingerprint() << "\n";
    const std::uint64_t stream = hash_combine(cfg.seed, kDataStream);
    for (std::size_t i = 0; i < cfg.n_eval_episodes; ++i) {
        const Episode ep = sample_episode(split, EpisodeMode::Test, cfg.k_shot,
                                          hash_combine(stream, i),
                                          cfg.image_size);
        const std::string stem = dir + "/ep" + std::to_string(i);
        save_tensor(stem + "_query_image.trfs", ep.query_image);
        save_tensor(stem + "_query_mask.trfs", ep.query_mask);
        for (std::size_t k = 0; k < ep.support_images.size(); ++k) {
            save_tensor(stem + "_support_image" + std::to_string(k) + ".trfs",
                        ep.support_images[k]);
            save_tensor(stem + "_support_mask" + std::to_string(k) + ".trfs",
                        ep.support_masks[k]);
        }
        index << "episode " << i << " class " << ep.class_id << " seed "
              << ep.seed << "\n";
    }
    if (!index) throw IoError("index write failed");
    std::cout << "wrote " << cfg.n_eval_episodes << " episodes to " << dir
              << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    const TrfsConfig net_cfg = cfg.trfs_config();
    const TrainHyper hyper = cfg.train_hyper();
    BackboneParams backbone =
        init_backbone(cfg.channels, hash_combine(cfg.seed, kBackboneStream),
                      net_cfg.precision);
    TrfsParams params =
        init_trfs_params(net_cfg, hash_combine(cfg.seed, kParamStream));
    const auto folds = make_folds();
    const FoldSplit& split = folds[cfg.fold];

    write_config_stamp(cfg);
    std::ofstream log(cfg.out_dir + "/loss_log.txt");
    if (!log) throw IoError("cannot write " + cfg.out_dir + "/loss_log.txt");
    log.precision(17);

    OptimizerState state;
    const std::uint64_t stream = hash_combine(cfg.seed, kTrainStream);
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        std::vector<Episode> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(sample_episode(
                split, EpisodeMode::Train, cfg.k_shot,
                hash_combine(stream, step * cfg.batch_size + b),
                cfg.image_size));
        const double lr = poly_lr(hyper, state.step);
        const LossReport rep =
            train_step(batch, params, backbone, net_cfg, state, hyper);
        log << step << " " << rep.l_gem << " " << rep.l_lem << " " << lr << "\n";
        if ((step + 1) % 50 == 0 || step + 1 == cfg.total_steps)
            std::cout << "step " << step + 1 << "/" << cfg.total_steps
                      << " loss " << rep.total << "\n";
    }
    if (!log) throw IoError("loss log write failed");

    save_checkpoint(cfg.out_dir + "/checkpoint", params, backbone,
                    cfg.fingerprint());
    std::cout << "checkpoint written to " << cfg.out_dir << "/checkpoint\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::size_t n_threads) {
    const TrfsConfig net_cfg = cfg.trfs_config();
    BackboneParams backbone =
        init_backbone(cfg.channels, hash_combine(cfg.seed, kBackboneStream),
                      net_cfg.precision);
    TrfsParams params =
        init_trfs_params(net_cfg, hash_combine(cfg.seed, kParamStream));
    load_checkpoint(cfg.out_dir + "/checkpoint", params, backbone,
                    cfg.fingerprint());

    const auto folds = make_folds();
    const Model model = [&](const Episode& ep) {
        return infer(ep, params, backbone, net_cfg);
    };
    const FoldResult fold = evaluate_fold(
        folds[cfg.fold], model, cfg.n_eval_episodes, cfg.k_shot,
        hash_combine(cfg.seed, static_cast<std::uint64_t>(cfg.fold)),
        cfg.image_size, n_threads);

    EvalReport report;
    report.folds.push_back(fold);
    report.mean_miou = fold.miou;
    report.n_episodes_per_fold = cfg.n_eval_episodes;
    report.seed = cfg.seed;
    report.config_hash = cfg.fingerprint();
    save_report(cfg.out_dir + "/report.txt", report);
    std::cout << format_report(report);
    return kExitOk;
}

int cmd_gradcheck(RunConfig cfg) {
    cfg.precision = "reference"; // finite differences need full f64
    const TrfsConfig net_cfg = cfg.trfs_config();
    const BackboneParams backbone =
        init_backbone(cfg.channels, hash_combine(cfg.seed, kBackboneStream),
                      net_cfg.precision);
    const TrfsParams params =
        init_trfs_params(net_cfg, hash_combine(cfg.seed, kParamStream));
    const auto folds = make_folds();
    const Episode ep = sample_episode(
        folds[cfg.fold], EpisodeMode::Train, cfg.k_shot,
        hash_combine(hash_combine(cfg.seed, kTrainStream), 0), cfg.image_size);

    // the backbone is frozen, so the fused input is a constant of the check
    const Tensor fused = fuse_episode(ep, backbone);

    bool ok = true;
    std::cout << "parameter_group max_rel_err status\n";
    TrfsParams probe = params;
    probe.visit([&](const std::string& name, Tensor& target, bool) {
        const double err = finite_diff_check(
            [&](const Tensor& candidate) {
                TrfsParams copy = params;
                copy.visit([&](const std::string& n, Tensor& t, bool) {
                    if (n == name) t = candidate;
                });
                return forward_from_fused(fused, ep.query_mask, copy, net_cfg)
                    .loss_total;
            },
            target, 1e-5);
        const bool pass = err < 1e-4;
        ok = ok && pass;
        std::cout << name << " " << err << " " << (pass ? "PASS" : "FAIL")
                  << "\n";
    });
    std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return ok ? kExitOk : kExitNumerical;
}

int cmd_golden(const RunConfig& cfg) {
    const std::string dir = cfg.out_dir + "/golden";
    write_golden_kit(dir, cfg.seed, cfg.fingerprint());
    std::cout << "golden kit written to " << dir << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"trfs: transformer few-shot segmentation (desk scale)"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "key=value config file");
    app.add_option("--set", overrides, "config override, key=value");

    auto* gen = app.add_subcommand("gen-data", "materialize episodes to disk");
    auto* train = app.add_subcommand("train", "train and write a checkpoint");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::size_t n_threads = 1;
    eval->add_option("--threads", n_threads, "evaluation worker threads");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradients");
    auto* golden = app.add_subcommand("golden", "emit conformance vectors");
    // accept global options (-c/--set) on either side of the subcommand
    for (CLI::App* sub : {gen, train, eval, grad, golden}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        const RunConfig cfg = make_config(config_path, overrides);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, n_threads);
        if (grad->parsed()) return cmd_gradcheck(cfg);
        if (golden->parsed()) return cmd_golden(cfg);
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const BadMagic& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const TruncatedPayload& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const UnsupportedVersion& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const TrfsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
