#include "trfs/golden.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include "trfs/backbone.hpp"
#include "trfs/data.hpp"
#include "trfs/fusion.hpp"
#include "trfs/net.hpp"

namespace trfs {

namespace {

struct KitWriter {
    std::string dir;
    std::ofstream manifest;

    explicit KitWriter(const std::string& d) : dir(d) {
        std::filesystem::create_directories(dir);
        manifest.open(dir + "/manifest.txt");
        if (!manifest) throw IoError("golden: cannot write manifest in " + dir);
    }

    std::string sanitize(const std::string& name) {
        std::string out = name;
        for (char& c : out)
            if (c == '.' || c == '/') c = '_';
        return out;
    }

    void put(const std::string& op, const std::string& role,
             const std::string& name, const Tensor& t) {
        const std::string file = op + "." + role + "." + sanitize(name) + ".trfs";
        save_tensor(dir + "/" + file, t);
        manifest << op << " " << role << " " << name << " " << file << "\n";
    }
};

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
    std::vector<double> d(shape_product(shape));
    for (double& v : d) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(d));
}

Tensor rand_mask(std::size_t h, std::size_t w, Rng& rng) {
    std::vector<double> m(h * w);
    for (double& v : m) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    m[rng.uniform_int(h * w)] = 1.0; // never empty
    return Tensor({h, w}, std::move(m));
}

} // namespace

void write_golden_kit(const std::string& dir, std::uint64_t seed,
                      const std::string& fingerprint) {
    KitWriter kit(dir);
    if (!fingerprint.empty()) kit.manifest << "fingerprint " << fingerprint << "\n";
    const Precision prec = Precision::Reference;

    { // masked_gap
        Rng rng(hash_combine(seed, 1));
        const Tensor f = rand_tensor({4, 4, 8}, rng);
        const Tensor m = rand_mask(4, 4, rng);
        kit.put("masked_gap", "in", "features", f);
        kit.put("masked_gap", "in", "mask", m);
        kit.put("masked_gap", "out", "gap", masked_gap(f, m));
    }

    { // prior_mask
        Rng rng(hash_combine(seed, 2));
        const Tensor fq = rand_tensor({4, 4, 8}, rng);
        const Tensor fs = rand_tensor({4, 4, 8}, rng);
        const Tensor m = rand_mask(4, 4, rng);
        kit.put("prior_mask", "in", "query_features", fq);
        kit.put("prior_mask", "in", "support_features", fs);
        kit.put("prior_mask", "in", "support_mask", m);
        kit.put("prior_mask", "out", "prior", prior_mask(fq, fs, m));
    }

    { // mhsa
        Rng rng(hash_combine(seed, 3));
        const Tensor x = rand_tensor({16, 8}, rng);
        MHSAParams p = init_mhsa(8, 2, rng, prec);
        kit.put("mhsa", "in", "tokens", x);
        p.visit("mhsa", [&](const std::string& n, Tensor& t, bool) {
            kit.put("mhsa", "in", n, t);
        });
        kit.put("mhsa", "out", "tokens", mhsa(x, p));
    }

    { // adaptive_avg_pool (uneven bins on purpose)
        Rng rng(hash_combine(seed, 4));
        const Tensor x = rand_tensor({8, 8, 5}, rng);
        kit.put("adaptive_avg_pool", "in", "map", x);
        kit.put("adaptive_avg_pool", "out", "map", adaptive_avg_pool(x, 3, 3));
    }

    { // fmu_merge
        Rng rng(hash_combine(seed, 5));
        const Tensor xi = rand_tensor({4, 4, 8}, rng);
        const Tensor prev = rand_tensor({8, 8, 8}, rng);
        Conv2DParams p = init_conv2d(8, 16, 1, 1, rng, prec);
        kit.put("fmu_merge", "in", "xi_prime", xi);
        kit.put("fmu_merge", "in", "prev", prev);
        kit.put("fmu_merge", "in", "kernel", p.kernel);
        kit.put("fmu_merge", "in", "bias", p.bias);
        kit.put("fmu_merge", "out", "merged", fmu_merge(xi, prev, p));
    }

    TrfsConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    cfg.precision = prec;

    { // gem_branch / lem_branch on one shared pyramid input
        Rng rng(hash_combine(seed, 6));
        TrfsParams params = init_trfs_params(cfg, hash_combine(seed, 7));
        const Tensor x = rand_tensor({4, 4, 2 * cfg.channels + 1}, rng);
        const std::vector<Tensor> pyramid = build_pyramid(x, cfg.scales);

        kit.put("gem_branch", "in", "fused", x);
        kit.put("lem_branch", "in", "fused", x);
        params.visit([&](const std::string& n, Tensor& t, bool) {
            const std::string op = n.rfind("gem.", 0) == 0   ? "gem_branch"
                                   : n.rfind("lem.", 0) == 0 ? "lem_branch"
                                                             : "";
            if (!op.empty()) kit.put(op, "in", n, t);
        });
        kit.put("gem_branch", "out", "t", gem_branch(pyramid, params.gem, cfg));
        kit.put("lem_branch", "out", "z", lem_branch(pyramid, params.lem));
    }

    { // forward_loss on a full episode
        const auto folds = make_folds();
        const Episode ep = sample_episode(folds[0], EpisodeMode::Train, 1,
                                          hash_combine(seed, 8), 32);
        BackboneParams bb =
            init_backbone(cfg.channels, hash_combine(seed, 9), prec);
        TrfsParams params = init_trfs_params(cfg, hash_combine(seed, 10));

        kit.put("forward_loss", "in", "query_image", ep.query_image);
        kit.put("forward_loss", "in", "query_mask", ep.query_mask);
        kit.put("forward_loss", "in", "support_image0", ep.support_images[0]);
        kit.put("forward_loss", "in", "support_mask0", ep.support_masks[0]);
        bb.visit("backbone", [&](const std::string& n, Tensor& t, bool) {
            kit.put("forward_loss", "in", n, t);
        });
        params.visit([&](const std::string& n, Tensor& t, bool) {
            kit.put("forward_loss", "in", n, t);
        });

        const ForwardResult res = forward_loss(ep, params, bb, cfg);
        kit.put("forward_loss", "out", "loss_total", res.loss_total.detached());
        kit.put("forward_loss", "out", "gem_logits", res.gem_logits->detached());
        kit.put("forward_loss", "out", "lem_logits", res.lem_logits->detached());
    }

    if (!kit.manifest) throw IoError("golden: manifest write failed");
}

} // namespace trfs
