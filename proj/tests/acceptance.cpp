// Acceptance gate: one self-contained check per release criterion. Each
// criterion prints PASS/FAIL with its wall time and a one-line detail; the
// process exits non-zero if any criterion fails. Criterion 1 exercises the
// installed CLI binary (path injected via TRFS_CLI_PATH); the rest run
// in-process against the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "trfs/config.hpp"
#include "trfs/eval.hpp"
#include "trfs/golden.hpp"

using namespace trfs;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return 1e30;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

bool dirs_identical(const fs::path& a, const fs::path& b, std::string& why) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++n;
        const fs::path other = b / e.path().filename();
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
            why = "mismatch at " + e.path().filename().string();
            return false;
        }
    }
    std::size_t m = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++m;
    if (n != m) why = "directory entry counts differ";
    return n == m;
}

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(TRFS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
}

const std::string kToyFlags =
    " --set image_size=32 --set channels=8 --set heads=2 --set mlp_ratio=2"
    " --set depth=1 --set scales=4,2 --set k_shot=1";

// --- criterion 1: CLI gradient suite on the toy config, < 60 s --------------

bool crit1_gradcheck(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_cli("gradcheck" + kToyFlags);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "exit %d, %.1f s (budget 60 s)", rc, secs);
    detail = buf;
    return rc == 0 && secs < 60.0;
}

// --- criterion 2: naive-loop oracle conformance, 100 cases per op -----------

bool crit2_oracles(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op = "none";
    const auto note = [&](const char* op, double d) {
        if (d > worst) {
            worst = d;
            worst_op = op;
        }
    };
    // random binary mask with at least one foreground pixel
    const auto random_mask = [](std::size_t h, std::size_t w, Rng& rng) {
        std::vector<double> m(h * w);
        for (double& v : m) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        m[rng.uniform_int(h * w)] = 1.0;
        return Tensor({h, w}, std::move(m));
    };

    for (std::uint64_t i = 0; i < 100; ++i) {
        Rng rng(hash_combine(0xACCE97ULL, i));

        { // mhsa
            const std::size_t heads = 1 + rng.uniform_int(3);
            const std::size_t c = heads * (1 + rng.uniform_int(3));
            const std::size_t n = 1 + rng.uniform_int(6);
            MHSAParams p = init_mhsa(c, heads, rng, Precision::Reference);
            Tensor x = oracle::random_tensor({n, c}, rng);
            const auto expect = oracle::attention(
                x.data(), n, c, p.wq.weight.data(), p.wq.bias.data(),
                p.wk.weight.data(), p.wk.bias.data(), p.wv.weight.data(),
                p.wv.bias.data(), p.wo.weight.data(), p.wo.bias.data(), heads);
            note("mhsa", max_abs_diff(mhsa(x, p).data(), expect));
        }
        { // conv2d
            const std::size_t h = 2 + rng.uniform_int(5),
                              w = 2 + rng.uniform_int(5);
            const std::size_t cin = 1 + rng.uniform_int(4),
                              cout = 1 + rng.uniform_int(4);
            const std::size_t kh = 1 + 2 * rng.uniform_int(3),
                              kw = 1 + 2 * rng.uniform_int(3);
            Conv2DParams p =
                init_conv2d(cout, cin, kh, kw, rng, Precision::Reference);
            Tensor x = oracle::random_tensor({h, w, cin}, rng);
            const auto expect =
                oracle::conv2d(x.data(), p.kernel.data(), p.bias.data(), h, w,
                               cin, cout, kh, kw);
            note("conv2d", max_abs_diff(conv2d(x, p).data(), expect));
        }
        { // adaptive_avg_pool
            const std::size_t h = 2 + rng.uniform_int(7),
                              w = 2 + rng.uniform_int(7);
            const std::size_t c = 1 + rng.uniform_int(3);
            const std::size_t oh = 1 + rng.uniform_int(h),
                              ow = 1 + rng.uniform_int(w);
            Tensor x = oracle::random_tensor({h, w, c}, rng);
            const auto expect =
                oracle::adaptive_avg_pool(x.data(), h, w, c, oh, ow);
            note("adaptive_avg_pool",
                 max_abs_diff(adaptive_avg_pool(x, oh, ow).data(), expect));
        }
        { // masked_gap
            const std::size_t h = 2 + rng.uniform_int(5),
                              w = 2 + rng.uniform_int(5);
            const std::size_t c = 1 + rng.uniform_int(6);
            Tensor f = oracle::random_tensor({h, w, c}, rng);
            Tensor m = random_mask(h, w, rng);
            const auto expect =
                oracle::masked_gap(f.data(), m.data(), h * w, c);
            note("masked_gap", max_abs_diff(masked_gap(f, m).data(), expect));
        }
        { // prior_mask
            const std::size_t h = 2 + rng.uniform_int(4),
                              w = 2 + rng.uniform_int(4);
            const std::size_t c = 1 + rng.uniform_int(5);
            Tensor fq = oracle::random_tensor({h, w, c}, rng);
            Tensor fsup = oracle::random_tensor({h, w, c}, rng);
            Tensor m = random_mask(h, w, rng);
            const auto expect =
                oracle::prior_mask(fq.data(), fsup.data(), m.data(), h * w, c);
            note("prior_mask",
                 max_abs_diff(prior_mask(fq, fsup, m).data(), expect));
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst op %s, max abs diff %.3g (tol 1e-10)",
                  worst_op.c_str(), worst);
    detail = buf;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return worst < 1e-10 && secs < 30.0;
}

// --- criterion 3: structural invariants --------------------------------------

bool crit3_structure(std::string& detail) {
    // (a) branch output shapes for 20 random valid configs
    for (std::uint64_t i = 0; i < 20; ++i) {
        Rng rng(hash_combine(0x57ULL, i));
        TrfsConfig cfg;
        cfg.heads = 1 + rng.uniform_int(3);
        cfg.channels = cfg.heads * (2 + rng.uniform_int(3));
        cfg.mlp_ratio = 1 + rng.uniform_int(3);
        cfg.depth = rng.uniform_int(3);
        const std::vector<std::size_t> pool = {8, 6, 4, 3, 2};
        cfg.scales.clear();
        const std::size_t first = rng.uniform_int(2); // start at 8 or 6
        cfg.scales.push_back(pool[first]);
        for (std::size_t j = first + 1; j < pool.size(); ++j)
            if (rng.bernoulli(0.5)) cfg.scales.push_back(pool[j]);
        if (cfg.scales.size() < 2) cfg.scales.push_back(2);
        cfg.precision = Precision::Reference;
        cfg.validate();

        TrfsParams p = init_trfs_params(cfg, hash_combine(0x91ULL, i));
        Tensor x = oracle::random_tensor({8, 8, 2 * cfg.channels + 1}, rng);
        const auto pyr = build_pyramid(x, cfg.scales);
        const std::size_t r1 = cfg.scales[0];
        const std::vector<std::size_t> want = {
            r1, r1, cfg.scales.size() * cfg.channels};
        if (gem_branch(pyr, p.gem, cfg).shape() != want ||
            lem_branch(pyr, p.lem).shape() != want) {
            detail = "branch output shape mismatch on config " +
                     std::to_string(i);
            return false;
        }
    }

    // (b) disabled-branch gradients are exactly zero
    TrfsConfig cfg;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    cfg.precision = Precision::Reference;
    const auto folds = make_folds();
    const Episode ep = sample_episode(folds[0], EpisodeMode::Train, 1, 3, 32);
    BackboneParams bb = init_backbone(cfg.channels, 7, cfg.precision);
    const TrfsParams params = init_trfs_params(cfg, 8);

    const auto off_branch_grads_zero = [&](BranchMode mode, const char* off) {
        TrfsConfig c2 = cfg;
        c2.mode = mode;
        GradientTape tape;
        TrfsParams watched = params;
        watched.visit([&](const std::string&, Tensor& t, bool) { tape.watch(t); });
        tape.backward(forward_loss(ep, watched, bb, c2).loss_total);
        bool ok = true;
        watched.visit([&](const std::string& n, Tensor& t, bool) {
            if (n.rfind(off, 0) != 0) return;
            for (double g : tape.grad(t)) ok = ok && g == 0.0;
        });
        return ok;
    };
    if (!off_branch_grads_zero(BranchMode::GemOnly, "lem")) {
        detail = "gem-only mode produced a non-zero LEM gradient";
        return false;
    }
    if (!off_branch_grads_zero(BranchMode::LemOnly, "gem")) {
        detail = "lem-only mode produced a non-zero GEM gradient";
        return false;
    }

    // (c) support-order permutation leaves infer bitwise unchanged
    const Episode ep3 = sample_episode(folds[0], EpisodeMode::Train, 3, 4, 32);
    Episode rotated = ep3;
    std::rotate(rotated.support_images.begin(),
                rotated.support_images.begin() + 1,
                rotated.support_images.end());
    std::rotate(rotated.support_masks.begin(),
                rotated.support_masks.begin() + 1, rotated.support_masks.end());
    if (infer(ep3, params, bb, cfg).data() !=
        infer(rotated, params, bb, cfg).data()) {
        detail = "infer output changed under support permutation";
        return false;
    }

    detail = "20 shape configs, branch gating, support permutation";
    return true;
}

// --- criterion 4: GEM token-permutation consistency --------------------------

bool crit4_permutation(std::string& detail) {
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        Rng rng(hash_combine(0x9E4ULL, i));
        TrfsConfig cfg;
        cfg.heads = 2;
        cfg.channels = 8;
        cfg.mlp_ratio = 2;
        cfg.depth = 2;
        cfg.scales = {4, 2};
        cfg.precision = Precision::Reference;
        TrfsParams p = init_trfs_params(cfg, hash_combine(0xA1ULL, i));
        const std::size_t n = 16, c = cfg.channels;
        Tensor tokens = oracle::random_tensor({n, c}, rng);

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t k = n - 1; k > 0; --k)
            std::swap(perm[k], perm[rng.uniform_int(k + 1)]);
        std::vector<double> permuted(n * c);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t j = 0; j < c; ++j)
                permuted[a * c + j] = tokens.at(perm[a] * c + j);

        // one GEM scale's token stack: blocks plus the closing cross-token
        // standardization, both permutation-equivariant
        const auto run_stack = [&](Tensor t) {
            for (const auto& b : p.gem[0].blocks)
                t = transformer_block(t, b, cfg.post_norm);
            return transpose2d(
                layer_norm(transpose2d(t), unit_layer_norm(n)));
        };
        const Tensor direct = run_stack(tokens);
        const Tensor via = run_stack(Tensor({n, c}, permuted));
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t j = 0; j < c; ++j)
                worst = std::max(worst, std::abs(via.at(a * c + j) -
                                                 direct.at(perm[a] * c + j)));
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max abs diff %.3g over 20 cases (tol 1e-12)",
                  worst);
    detail = buf;
    return worst < 1e-12;
}

// --- criterion 5: overfit sanity on 50 held-in episodes ----------------------

bool crit5_overfit(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = 1;
    TrfsConfig cfg; // full toy config: C=32, heads=8, mlp 4, L=3, {8,4,2}
    cfg.precision = Precision::Fast;
    TrainHyper hyper;
    hyper.base_lr = 0.05;
    hyper.total_steps = 400;
    const auto folds = make_folds();

    std::vector<Episode> pool;
    for (std::uint64_t i = 0; i < 50; ++i)
        pool.push_back(sample_episode(folds[0], EpisodeMode::Train, 1,
                                      hash_combine(seed, i), 64));
    BackboneParams bb =
        init_backbone(cfg.channels, hash_combine(seed, 100), cfg.precision);
    TrfsParams params = init_trfs_params(cfg, hash_combine(seed, 101));
    OptimizerState state;

    double last50 = 0.0;
    for (std::size_t step = 0; step < 400; ++step) {
        const std::vector<Episode> batch{pool[(step * 2) % 50],
                                         pool[(step * 2 + 1) % 50]};
        LossReport rep;
        try {
            rep = train_step(batch, params, bb, cfg, state, hyper);
        } catch (const NonFiniteLoss&) {
            detail = "non-finite loss at step " + std::to_string(step);
            return false;
        }
        if (step >= 350) last50 += rep.total;
    }
    last50 /= 50.0;

    std::map<int, ClassCounts> counts;
    for (const Episode& ep : pool) {
        const Tensor pred = infer(ep, params, bb, cfg);
        auto& c = counts[ep.class_id];
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred.at(i) > 0.5, g = ep.query_mask.at(i) > 0.5;
            c.intersection += p && g;
            c.union_ += p || g;
        }
    }
    double miou = 0.0;
    for (const auto& [cls, c] : counts)
        miou += (c.union_ ? static_cast<double>(c.intersection) / c.union_
                          : 1.0) /
                counts.size();

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "last-50 mean loss %.4f (< 0.15), train mIoU %.4f (> 0.85), "
                  "%.0f s (budget 600 s)",
                  last50, miou, secs);
    detail = buf;
    return last50 < 0.15 && miou > 0.85 && secs < 600.0;
}

// --- criterion 6: both >= max(gem, lem) - 0.02, 3 seeds, 4 folds -------------

bool crit6_generalization(std::string& detail) {
    TrfsConfig cfg;
    cfg.channels = 16;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    cfg.precision = Precision::Fast;
    TrainHyper hyper;
    hyper.base_lr = 0.05;
    hyper.total_steps = 150;
    const std::size_t image_size = 32, n_eval = 500, n_threads = 8;
    const auto folds = make_folds();
    const BranchMode modes[3] = {BranchMode::GemOnly, BranchMode::LemOnly,
                                 BranchMode::Both};

    std::ostringstream out;
    bool ok = true;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        double fold_mean[3] = {0.0, 0.0, 0.0};
        for (int m = 0; m < 3; ++m) {
            cfg.mode = modes[m];
            for (int f = 0; f < 4; ++f) {
                BackboneParams bb = init_backbone(
                    cfg.channels, hash_combine(seed, 0xB8B0), cfg.precision);
                TrfsParams params =
                    init_trfs_params(cfg, hash_combine(seed, 0x9A7A));
                OptimizerState state;
                const std::uint64_t ts =
                    hash_combine(hash_combine(seed, 0x7A19),
                                 static_cast<std::uint64_t>(f));
                for (std::size_t s = 0; s < hyper.total_steps; ++s) {
                    std::vector<Episode> batch;
                    for (std::uint64_t b = 0; b < 2; ++b)
                        batch.push_back(sample_episode(
                            folds[f], EpisodeMode::Train, 1,
                            hash_combine(ts, s * 2 + b), image_size));
                    try {
                        train_step(batch, params, bb, cfg, state, hyper);
                    } catch (const NonFiniteLoss&) {
                        detail = "non-finite loss (seed " +
                                 std::to_string(seed) + ")";
                        return false;
                    }
                }
                const Model model = [&](const Episode& ep) {
                    return infer(ep, params, bb, cfg);
                };
                const FoldResult r = evaluate_fold(
                    folds[f], model, n_eval, 1,
                    hash_combine(seed, static_cast<std::uint64_t>(f)),
                    image_size, n_threads);
                fold_mean[m] += r.miou / 4.0;
            }
        }
        const double bar = std::max(fold_mean[0], fold_mean[1]) - 0.02;
        ok = ok && fold_mean[2] >= bar;
        char buf[96];
        std::snprintf(buf, sizeof buf,
                      "seed %llu both %.3f vs gem %.3f / lem %.3f; ",
                      static_cast<unsigned long long>(seed), fold_mean[2],
                      fold_mean[0], fold_mean[1]);
        out << buf;
    }
    detail = out.str();
    return ok;
}

// --- criterion 7: loss arithmetic --------------------------------------------

bool crit7_loss(std::string& detail) {
    TrfsConfig cfg;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    cfg.precision = Precision::Reference;
    const auto folds = make_folds();
    const Episode ep = sample_episode(folds[0], EpisodeMode::Train, 1, 9, 32);
    BackboneParams bb = init_backbone(cfg.channels, 7, cfg.precision);
    TrfsParams params = init_trfs_params(cfg, 8);

    // zeroed heads force uniform logits -> per-branch loss is exactly ln 2
    TrfsParams uniform = params;
    for (HeadParams* h : {&uniform.gem_head, &uniform.lem_head}) {
        h->conv3.kernel = Tensor::zeros(h->conv3.kernel.shape());
        h->conv3.bias = Tensor::zeros(h->conv3.bias.shape());
        h->conv1.kernel = Tensor::zeros(h->conv1.kernel.shape());
        h->conv1.bias = Tensor::zeros(h->conv1.bias.shape());
    }
    const ForwardResult u = forward_loss(ep, uniform, bb, cfg);
    const double ln2 = std::log(2.0);
    const double egem = std::abs(u.report.l_gem - ln2);
    const double elem = std::abs(u.report.l_lem - ln2);

    // exact total = l_gem + l_lem, on uniform and on generic parameters
    const ForwardResult g = forward_loss(ep, params, bb, cfg);
    const bool exact = u.report.total == u.report.l_gem + u.report.l_lem &&
                       g.report.total == g.report.l_gem + g.report.l_lem;

    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "|l_gem-ln2|=%.2g, |l_lem-ln2|=%.2g (tol 1e-9), total %s",
                  egem, elem, exact ? "exact" : "NOT exact");
    detail = buf;
    return egem < 1e-9 && elem < 1e-9 && exact;
}

// --- criterion 8: determinism & formats ---------------------------------------

bool crit8_determinism(std::string& detail) {
    const fs::path root = fs::temp_directory_path() / "trfs_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string a = (root / "a").string(), b = (root / "b").string();
    const std::string train_flags =
        kToyFlags + " --set total_steps=30 --set n_eval_episodes=20";
    std::string why;

    // identical (config, seed) twice -> bitwise-identical checkpoints
    if (run_cli("train" + train_flags + " --set out_dir=" + a) != 0 ||
        run_cli("train" + train_flags + " --set out_dir=" + b) != 0) {
        detail = "CLI train failed";
        return false;
    }
    if (!dirs_identical(root / "a" / "checkpoint", root / "b" / "checkpoint",
                        why)) {
        detail = "checkpoints differ: " + why;
        return false;
    }

    // identical eval twice -> identical EvalReport
    if (run_cli("eval" + train_flags + " --set out_dir=" + a) != 0) {
        detail = "CLI eval failed";
        return false;
    }
    const std::string report1 = slurp(root / "a" / "report.txt");
    if (run_cli("eval" + train_flags + " --set out_dir=" + a) != 0 ||
        slurp(root / "a" / "report.txt") != report1) {
        detail = "eval reports differ between identical runs";
        return false;
    }

    // TensorFile round trip is bit-exact in both dtypes
    Rng rng(77);
    for (const Precision prec : {Precision::Fast, Precision::Reference}) {
        Tensor t = oracle::random_tensor({3, 5, 2}, rng);
        t = Tensor(t.shape(), t.data(), prec);
        const std::string p1 = (root / "t1.tensor").string();
        const std::string p2 = (root / "t2.tensor").string();
        save_tensor(p1, t);
        const Tensor back = load_tensor(p1);
        save_tensor(p2, back);
        if (back.data() != t.data() || slurp(p1) != slurp(p2)) {
            detail = "TensorFile round trip not bit-exact";
            return false;
        }
    }

    // checkpoint round trip: save -> load -> save is bitwise stable
    TrfsConfig cfg;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    BackboneParams bb = init_backbone(cfg.channels, 5, cfg.precision);
    TrfsParams params = init_trfs_params(cfg, 6);
    save_checkpoint((root / "ck1").string(), params, bb, "fp");
    TrfsParams fresh = init_trfs_params(cfg, 999);
    BackboneParams bb2 = init_backbone(cfg.channels, 999, cfg.precision);
    load_checkpoint((root / "ck1").string(), fresh, bb2, "fp");
    save_checkpoint((root / "ck2").string(), fresh, bb2, "fp");
    if (!dirs_identical(root / "ck1", root / "ck2", why)) {
        detail = "checkpoint round trip differs: " + why;
        return false;
    }

    // golden kit regeneration is bitwise stable
    write_golden_kit((root / "g1").string(), 11, "fp");
    write_golden_kit((root / "g2").string(), 11, "fp");
    if (!dirs_identical(root / "g1", root / "g2", why)) {
        detail = "golden kits differ: " + why;
        return false;
    }

    fs::remove_all(root);
    detail = "train/eval reruns, TensorFile, checkpoint, golden kit";
    return true;
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient suite (CLI gradcheck, toy config)", crit1_gradcheck},
        {2, "oracle conformance (5 ops x 100 instances)", crit2_oracles},
        {3, "structural invariants", crit3_structure},
        {4, "GEM token-permutation consistency", crit4_permutation},
        {5, "overfit sanity (400 steps, 50 episodes)", crit5_overfit},
        {6, "generalization direction (3 seeds x 3 modes x 4 folds)",
         crit6_generalization},
        {7, "loss arithmetic", crit7_loss},
        {8, "determinism & formats", crit8_determinism},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        std::printf("criterion %d [%s]: %s (%.1f s) — %s\n", c.id,
                    ok ? "PASS" : "FAIL", c.name, secs, detail.c_str());
        std::fflush(stdout);
        failures += ok ? 0 : 1;
    }
    std::printf("%d/8 criteria passed\n", 8 - failures);
    return failures == 0 ? 0 : 1;
}
