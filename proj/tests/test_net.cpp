#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "trfs/net.hpp"

using namespace trfs;

namespace {
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

TrfsConfig tiny_config() {
    TrfsConfig cfg;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.scales = {4, 2};
    cfg.mode = BranchMode::Both;
    cfg.precision = Precision::Reference;
    return cfg;
}

Episode tiny_episode(std::uint64_t seed, std::size_t image_size = 32,
                     std::size_t k = 1) {
    const auto folds = make_folds();
    return sample_episode(folds[0], EpisodeMode::Train, k, seed, image_size);
}
} // namespace

TEST_CASE("build_pyramid shapes and identity") {
    Rng rng(1);
    Tensor x = oracle::random_tensor({8, 8, 9}, rng);
    const auto one = build_pyramid(x, {8});
    CHECK(one[0].data() == x.data());

    const auto pyr = build_pyramid(x, {8, 4, 2});
    CHECK(pyr[0].shape() == std::vector<std::size_t>{8, 8, 9});
    CHECK(pyr[1].shape() == std::vector<std::size_t>{4, 4, 9});
    CHECK(pyr[2].shape() == std::vector<std::size_t>{2, 2, 9});

    CHECK_THROWS_AS(build_pyramid(x, {16}), BadOutputSize);
}

TEST_CASE("fmu_merge first-scale identity, zero branch, and 1x1 oracle") {
    Rng rng(2);
    Tensor xi = oracle::random_tensor({2, 2, 3}, rng);
    CHECK(fmu_merge(xi, std::nullopt, std::nullopt).data() == xi.data());

    Tensor prev = oracle::random_tensor({4, 4, 3}, rng);
    Conv2DParams zero{Tensor::zeros({3, 6, 1, 1}), Tensor::zeros({3})};
    CHECK(max_abs_diff(fmu_merge(xi, prev, zero).data(), xi.data()) == 0.0);

    // hand-set 1x1 weights: per-pixel matrix-vector product oracle
    Conv2DParams p = init_conv2d(3, 6, 1, 1, rng, Precision::Reference);
    const Tensor resized = bilinear_resize(prev, 2, 2);
    const Tensor merged = fmu_merge(xi, prev, p);
    for (std::size_t pix = 0; pix < 4; ++pix)
        for (std::size_t o = 0; o < 3; ++o) {
            double acc = p.bias.at(o) + xi.at(pix * 3 + o);
            for (std::size_t i = 0; i < 6; ++i) {
                const double v = i < 3 ? xi.at(pix * 3 + i)
                                       : resized.at(pix * 3 + (i - 3));
                acc += v * p.kernel.at(o * 6 + i);
            }
            CHECK(merged.at(pix * 3 + o) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gem_branch degenerate and shape contracts") {
    Rng rng(3);

    SUBCASE("n=1, L=0 reduces to the channel-reduced input") {
        TrfsConfig cfg = tiny_config();
        cfg.depth = 0;
        cfg.scales = {4};
        Tensor x = oracle::random_tensor({4, 4, 9}, rng);
        std::vector<GemScaleParams> params(1);
        params[0].reducer = init_linear(4, 9, rng, Precision::Reference);
        const Tensor t = gem_branch({x}, params, cfg);
        const Tensor expect =
            linear(x.reshaped({16, 9}), params[0].reducer.weight,
                   params[0].reducer.bias);
        CHECK(t.shape() == std::vector<std::size_t>{4, 4, 4});
        CHECK(max_abs_diff(t.data(), expect.data()) == 0.0);
    }

    SUBCASE("T and Z shapes equal R1 x R1 x nC") {
        TrfsConfig cfg;
        cfg.channels = 32;
        cfg.heads = 8;
        cfg.depth = 1;
        cfg.scales = {8, 4, 2};
        cfg.precision = Precision::Reference;
        TrfsParams p = init_trfs_params(cfg, 5);
        Rng r2(9);
        Tensor x = oracle::random_tensor({8, 8, 65}, r2);
        const auto pyr = build_pyramid(x, cfg.scales);
        const Tensor t = gem_branch(pyr, p.gem, cfg);
        const Tensor z = lem_branch(pyr, p.lem);
        CHECK(t.shape() == std::vector<std::size_t>{8, 8, 96});
        CHECK(z.shape() == t.shape());
    }
}

TEST_CASE("gem_branch matches a straight-line composition of sub-ops") {
    Rng rng(4);
    TrfsConfig cfg = tiny_config();
    TrfsParams p = init_trfs_params(cfg, 11);
    Tensor x = oracle::random_tensor({4, 4, 9}, rng);
    const auto pyr = build_pyramid(x, cfg.scales);

    // scale 0
    Tensor t0 = linear(pyr[0].reshaped({16, 9}), p.gem[0].reducer.weight,
                       p.gem[0].reducer.bias);
    for (const auto& b : p.gem[0].blocks) t0 = transformer_block(t0, b);
    // closing norm: per-channel standardization across the 16 tokens
    t0 = transpose2d(layer_norm(transpose2d(t0), unit_layer_norm(16)));
    const Tensor t0_map = t0.reshaped({4, 4, 4});
    // scale 1
    Tensor x1p = linear(pyr[1].reshaped({4, 9}), p.gem[1].reducer.weight,
                        p.gem[1].reducer.bias)
                     .reshaped({2, 2, 4});
    const Tensor prev = bilinear_resize(t0_map, 2, 2);
    Tensor y1 = add(conv2d(concat_lastdim({x1p, prev}), *p.gem[1].fmu), x1p);
    Tensor t1 = y1.reshaped({4, 4});
    for (const auto& b : p.gem[1].blocks) t1 = transformer_block(t1, b);
    t1 = transpose2d(layer_norm(transpose2d(t1), unit_layer_norm(4)));
    const Tensor expect = concat_lastdim(
        {t0_map, bilinear_resize(t1.reshaped({2, 2, 4}), 4, 4)});

    const Tensor t = gem_branch(pyr, p.gem, cfg);
    CHECK(max_abs_diff(t.data(), expect.data()) < 1e-10);
}

TEST_CASE("lem_branch zero blocks reduce to the reducer/FMU chain") {
    Rng rng(5);
    TrfsConfig cfg = tiny_config();
    TrfsParams p = init_trfs_params(cfg, 13);
    for (auto& s : p.lem)
        for (auto& b : s.blocks)
            b = {Tensor::zeros({4, 4, 3, 3}), Tensor::zeros({4})};
    Tensor x = oracle::random_tensor({4, 4, 9}, rng);
    const auto pyr = build_pyramid(x, cfg.scales);

    // per-channel standardization over positions, as the branch applies after
    // each scale's (here zeroed) block stack
    const auto std_pos = [](const Tensor& t, std::size_t r) {
        Tensor flat = t.reshaped({r * r, t.extent(2)});
        flat = transpose2d(layer_norm(transpose2d(flat), unit_layer_norm(r * r)));
        return flat.reshaped({r, r, t.extent(2)});
    };

    // with zero conv blocks, each scale's output is standardized Y_i
    const Tensor z0 = std_pos(
        linear(pyr[0].reshaped({16, 9}), p.lem[0].reducer.weight,
               p.lem[0].reducer.bias)
            .reshaped({4, 4, 4}),
        4);
    const Tensor x1p = linear(pyr[1].reshaped({4, 9}), p.lem[1].reducer.weight,
                              p.lem[1].reducer.bias)
                           .reshaped({2, 2, 4});
    const Tensor y1 = add(
        conv2d(concat_lastdim({x1p, bilinear_resize(z0, 2, 2)}), *p.lem[1].fmu),
        x1p);
    const Tensor z1 = std_pos(y1, 2);
    const Tensor expect = concat_lastdim({z0, bilinear_resize(z1, 4, 4)});
    CHECK(max_abs_diff(lem_branch(pyr, p.lem).data(), expect.data()) < 1e-10);
}

TEST_CASE("cross_entropy_logits values and oracle") {
    // saturated correct logits -> ~0 loss
    std::vector<double> big(8);
    Tensor mask({2, 2}, {1, 0, 1, 1});
    for (std::size_t p = 0; p < 4; ++p) {
        big[p * 2] = mask.at(p) > 0.5 ? -20.0 : 20.0;
        big[p * 2 + 1] = mask.at(p) > 0.5 ? 20.0 : -20.0;
    }
    CHECK(cross_entropy_logits(Tensor({2, 2, 2}, big), mask).item() < 1e-6);

    // uniform zero logits -> ln 2
    CHECK(cross_entropy_logits(Tensor::zeros({2, 2, 2}), mask).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Rng rng(6);
    Tensor logits = oracle::random_tensor({3, 3, 2}, rng, -2, 2);
    std::vector<double> m9(9);
    for (double& v : m9) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor mask9({3, 3}, m9);
    CHECK(std::abs(cross_entropy_logits(logits, mask9).item() -
                   oracle::cross_entropy(logits.data(), m9, 9)) < 1e-10);

    // gradient
    CHECK(finite_diff_check(
              [&](const Tensor& t) { return cross_entropy_logits(t, mask9); },
              logits, 1e-6) < 1e-7);
}

TEST_CASE("forward_loss report arithmetic and branch modes") {
    TrfsConfig cfg = tiny_config();
    const Episode ep = tiny_episode(1);
    BackboneParams bb = init_backbone(cfg.channels, 2, cfg.precision);
    TrfsParams params = init_trfs_params(cfg, 3);

    const ForwardResult both = forward_loss(ep, params, bb, cfg);
    CHECK(both.report.total == both.report.l_gem + both.report.l_lem);
    CHECK(both.gem_logits.has_value());
    CHECK(both.lem_logits.has_value());
    CHECK(both.report.l_gem > 0.0);
    CHECK(both.report.l_lem > 0.0);

    cfg.mode = BranchMode::GemOnly;
    const ForwardResult gem = forward_loss(ep, params, bb, cfg);
    CHECK(gem.report.l_lem == 0.0);
    CHECK_FALSE(gem.lem_logits.has_value());
    CHECK(gem.report.total == gem.report.l_gem);

    cfg.mode = BranchMode::LemOnly;
    const ForwardResult lem = forward_loss(ep, params, bb, cfg);
    CHECK(lem.report.l_gem == 0.0);
    CHECK(lem.report.total == lem.report.l_lem);
}

TEST_CASE("gradient integrity on the full toy loss") {
    TrfsConfig cfg = tiny_config();
    cfg.scales = {2};
    const Episode ep = tiny_episode(2, 32);
    BackboneParams bb = init_backbone(cfg.channels, 7, Precision::Reference);
    TrfsParams params = init_trfs_params(cfg, 8);

    const std::vector<std::string> names = params.names();
    // spot-check a few structurally different parameter tensors
    for (const std::string& target :
         {std::string("gem.scale0.reducer.weight"),
          std::string("gem.scale0.block0.attn.wq.weight"),
          std::string("gem.scale0.block0.ln1.gamma"),
          std::string("lem.scale0.block0.kernel"),
          std::string("gem_head.conv3.kernel"), std::string("lem_head.conv1.bias")}) {
        Tensor base;
        params.visit([&](const std::string& n, Tensor& t, bool) {
            if (n == target) base = t;
        });
        REQUIRE(base.size() > 0);
        const double err = finite_diff_check(
            [&](const Tensor& t) {
                TrfsParams copy = params;
                copy.visit([&](const std::string& n, Tensor& pt, bool) {
                    if (n == target) pt = t;
                });
                return forward_loss(ep, copy, bb, cfg).loss_total;
            },
            base, 1e-5);
        INFO("param group: " << target);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("branch independence of gradients") {
    TrfsConfig cfg = tiny_config();
    cfg.mode = BranchMode::GemOnly;
    const Episode ep = tiny_episode(3);
    BackboneParams bb = init_backbone(cfg.channels, 7, Precision::Reference);
    TrfsParams params = init_trfs_params(cfg, 8);

    GradientTape tape;
    TrfsParams watched = params;
    watched.visit([&](const std::string&, Tensor& t, bool) { tape.watch(t); });
    const ForwardResult res = forward_loss(ep, watched, bb, cfg);
    tape.backward(res.loss_total);

    watched.visit([&](const std::string& n, Tensor& t, bool) {
        const std::vector<double>& g = tape.grad(t);
        const bool is_lem = n.rfind("lem", 0) == 0; // lem.* and lem_head.*
        double nrm = 0.0;
        for (double v : g) nrm += std::abs(v);
        if (is_lem)
            CHECK(nrm == 0.0);
    });

    // and vice versa
    cfg.mode = BranchMode::LemOnly;
    GradientTape tape2;
    TrfsParams watched2 = params;
    watched2.visit([&](const std::string&, Tensor& t, bool) { tape2.watch(t); });
    tape2.backward(forward_loss(ep, watched2, bb, cfg).loss_total);
    watched2.visit([&](const std::string& n, Tensor& t, bool) {
        const bool is_gem = n.rfind("gem", 0) == 0;
        double nrm = 0.0;
        for (double v : tape2.grad(t)) nrm += std::abs(v);
        if (is_gem)
            CHECK(nrm == 0.0);
    });
}

TEST_CASE("support-order invariance of infer") {
    TrfsConfig cfg = tiny_config();
    const Episode ep = tiny_episode(4, 32, 3);
    BackboneParams bb = init_backbone(cfg.channels, 7, Precision::Reference);
    TrfsParams params = init_trfs_params(cfg, 8);

    Episode permuted = ep;
    std::rotate(permuted.support_images.begin(),
                permuted.support_images.begin() + 1,
                permuted.support_images.end());
    std::rotate(permuted.support_masks.begin(),
                permuted.support_masks.begin() + 1,
                permuted.support_masks.end());

    CHECK(infer(ep, params, bb, cfg).data() ==
          infer(permuted, params, bb, cfg).data());
}

TEST_CASE("token-permutation consistency of the transformer stack") {
    Rng rng(14);
    TrfsConfig cfg = tiny_config();
    TrfsParams p = init_trfs_params(cfg, 21);
    const std::size_t n = 16, c = cfg.channels;
    Tensor tokens = oracle::random_tensor({n, c}, rng);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

    std::vector<double> permuted(n * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            permuted[i * c + j] = tokens.at(perm[i] * c + j);

    auto run_stack = [&](Tensor t) {
        for (const auto& b : p.gem[0].blocks) t = transformer_block(t, b);
        return t;
    };
    const Tensor direct = run_stack(tokens);
    const Tensor via = run_stack(Tensor({n, c}, permuted));
    // inverse-permute the permuted-stack output
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            CHECK(std::abs(via.at(i * c + j) - direct.at(perm[i] * c + j)) <
                  1e-12);
}

TEST_CASE("head_average arithmetic") {
    // probabilities 0.6/0.4 and 0.2/0.8 average to 0.4/0.6 -> class 1
    auto logits_for = [](double p1) {
        // logit pair giving P(class1) = p1
        return std::vector<double>{std::log(1.0 - p1), std::log(p1)};
    };
    Tensor a({1, 1, 2}, logits_for(0.4));
    Tensor b({1, 1, 2}, logits_for(0.8));
    const Tensor avg = head_average({a, b}, false);
    CHECK(avg.at(0) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(avg.at(1) == doctest::Approx(0.6).epsilon(1e-12));

    // identical heads: average equals either head
    const Tensor same = head_average({a, a}, false);
    CHECK(same.at(1) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("infer with identical heads matches gem-only prediction") {
    TrfsConfig cfg = tiny_config();
    const Episode ep = tiny_episode(5);
    BackboneParams bb = init_backbone(cfg.channels, 7, Precision::Reference);
    TrfsParams params = init_trfs_params(cfg, 8);
    cfg.mode = BranchMode::GemOnly;
    const Tensor gem_pred = infer(ep, params, bb, cfg);
    const ForwardResult res = forward_loss(ep, params, bb, cfg);
    const Tensor avg = head_average({res.gem_logits->detached()}, false);
    for (std::size_t p = 0; p < gem_pred.size(); ++p)
        CHECK(gem_pred.at(p) == (avg.at(p * 2 + 1) > avg.at(p * 2) ? 1.0 : 0.0));
}

TEST_CASE("poly schedule endpoints") {
    TrainHyper h;
    h.base_lr = 0.05;
    h.total_steps = 100;
    CHECK(poly_lr(h, 0) == 0.05);
    CHECK(poly_lr(h, 100) == 0.0);
    CHECK(poly_lr(h, 50) == doctest::Approx(0.05 * std::pow(0.5, 0.9)));
}

TEST_CASE("sgd momentum recurrence matches hand iteration") {
    std::vector<double> w{1.0}, v{0.0};
    double hw = 1.0, hv = 0.0;
    for (int step = 0; step < 5; ++step) {
        const double g = 2.0 * hw; // d/dw w^2
        std::vector<double> grad{2.0 * w[0]};
        sgd_momentum_update(w, grad, v, 0.1, 0.9, 0.0);
        hv = 0.9 * hv + g;
        hw = hw - 0.1 * hv;
        CHECK(std::abs(w[0] - hw) < 1e-12);
        CHECK(std::abs(v[0] - hv) < 1e-12);
    }

    // zero gradients: parameters change only by weight decay
    std::vector<double> w2{2.0}, v2{0.0};
    sgd_momentum_update(w2, {0.0}, v2, 0.1, 0.9, 1e-2);
    CHECK(w2[0] == doctest::Approx(2.0 - 0.1 * 1e-2 * 2.0).epsilon(1e-15));
    std::vector<double> w3{2.0}, v3{0.0};
    sgd_momentum_update(w3, {0.0}, v3, 0.1, 0.9, 0.0);
    CHECK(w3[0] == 2.0);
}

TEST_CASE("train_step reduces loss on a repeated episode and rejects NaN") {
    TrfsConfig cfg = tiny_config();
    const Episode ep = tiny_episode(6);
    BackboneParams bb = init_backbone(cfg.channels, 7, cfg.precision);
    TrfsParams params = init_trfs_params(cfg, 8);
    OptimizerState state;
    TrainHyper hyper;
    hyper.base_lr = 0.05;
    hyper.total_steps = 40;

    const double first = train_step({ep}, params, bb, cfg, state, hyper).total;
    double last = first;
    for (int i = 1; i < 40; ++i)
        last = train_step({ep}, params, bb, cfg, state, hyper).total;
    CHECK(last < first);

    TrfsParams bad = init_trfs_params(cfg, 8);
    bad.gem[0].reducer.weight =
        Tensor({cfg.channels, 2 * cfg.channels + 1},
               std::vector<double>(cfg.channels * (2 * cfg.channels + 1),
                                   std::numeric_limits<double>::quiet_NaN()));
    OptimizerState s2;
    CHECK_THROWS_AS(train_step({ep}, bad, bb, cfg, s2, hyper), NonFiniteLoss);
}

TEST_CASE("checkpoint round trip is bit-exact and fingerprint-checked") {
    TrfsConfig cfg = tiny_config();
    cfg.precision = Precision::Fast;
    TrfsParams params = init_trfs_params(cfg, 12);
    BackboneParams bb = init_backbone(cfg.channels, 13, cfg.precision);

    const std::string dir =
        (std::filesystem::temp_directory_path() / "trfs_ckpt").string();
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, params, bb, "deadbeef");

    TrfsParams loaded = init_trfs_params(cfg, 99);
    BackboneParams lbb = init_backbone(cfg.channels, 98, cfg.precision);
    load_checkpoint(dir, loaded, lbb, "deadbeef");

    std::vector<Tensor*> a = params.tensors();
    std::vector<Tensor*> b = loaded.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i]->data() == b[i]->data());
    CHECK(lbb.stage1.kernel.data() == bb.stage1.kernel.data());

    CHECK_THROWS_AS(load_checkpoint(dir, loaded, lbb, "feedface"),
                    FingerprintMismatch);
}
