#include "trfs/net.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace trfs {

using detail::finish_op;

void TrfsConfig::validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0)
        throw HeadsDontDivide("config: C must be a positive multiple of heads");
    if (scales.empty()) throw ConfigError("config: scales must be non-empty");
    for (std::size_t i = 1; i < scales.size(); ++i)
        if (scales[i] >= scales[i - 1])
            throw ConfigError("config: scales must be strictly decreasing");
    if (scales.back() == 0) throw ConfigError("config: zero scale");
    if (mlp_ratio == 0) throw ConfigError("config: mlp_ratio must be positive");
}

void GemScaleParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    reducer.visit(prefix + ".reducer", fn);
    if (fmu) fmu->visit(prefix + ".fmu", fn);
    for (std::size_t l = 0; l < blocks.size(); ++l)
        blocks[l].visit(prefix + ".block" + std::to_string(l), fn);
}

void LemScaleParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    reducer.visit(prefix + ".reducer", fn);
    if (fmu) fmu->visit(prefix + ".fmu", fn);
    for (std::size_t l = 0; l < blocks.size(); ++l)
        blocks[l].visit(prefix + ".block" + std::to_string(l), fn);
}

void TrfsParams::visit(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < gem.size(); ++i)
        gem[i].visit("gem.scale" + std::to_string(i), fn);
    for (std::size_t i = 0; i < lem.size(); ++i)
        lem[i].visit("lem.scale" + std::to_string(i), fn);
    gem_head.visit("gem_head", fn);
    lem_head.visit("lem_head", fn);
}

std::vector<Tensor*> TrfsParams::tensors() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t, bool) { out.push_back(&t); });
    return out;
}

std::vector<std::string> TrfsParams::names() {
    std::vector<std::string> out;
    visit([&](const std::string& n, Tensor&, bool) { out.push_back(n); });
    return out;
}

TrfsParams init_trfs_params(const TrfsConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t c = cfg.channels;
    const std::size_t n = cfg.scales.size();
    const Precision prec = cfg.precision;
    Rng rng(hash_combine(seed, 0x7266ULL));

    // Half-scale start for the layers that write into a residual stream
    // (attention output projection, MLP output, FMU 1x1 convs): blocks begin
    // near-identity, which keeps early SGD steps at the default learning
    // rate from overshooting. LEM convs and the heads train at full Glorot
    // scale.
    constexpr double rs_gem = 0.5, rs_fmu = 0.5;
    const auto damp_l = [&](LinearParams q, double f) {
        std::vector<double> w(q.weight.data());
        for (double& v : w) v *= f;
        q.weight = Tensor(q.weight.shape(), w, prec);
        return q;
    };
    const auto damp_c = [&](Conv2DParams q, double f) {
        std::vector<double> k(q.kernel.data());
        for (double& v : k) v *= f;
        q.kernel = Tensor(q.kernel.shape(), k, prec);
        return q;
    };

    TrfsParams p;
    for (std::size_t i = 0; i < n; ++i) {
        GemScaleParams g;
        g.reducer = init_linear(c, 2 * c + 1, rng, prec);
        if (i > 0) g.fmu = damp_c(init_conv2d(c, 2 * c, 1, 1, rng, prec), rs_fmu);
        for (std::size_t l = 0; l < cfg.depth; ++l) {
            TransformerBlockParams b =
                init_transformer_block(c, cfg.heads, cfg.mlp_ratio, rng, prec);
            b.attn.wo = damp_l(std::move(b.attn.wo), rs_gem);
            b.mlp_out = damp_l(std::move(b.mlp_out), rs_gem);
            g.blocks.push_back(std::move(b));
        }
        p.gem.push_back(std::move(g));
    }
    for (std::size_t i = 0; i < n; ++i) {
        LemScaleParams lm;
        lm.reducer = init_linear(c, 2 * c + 1, rng, prec);
        if (i > 0) lm.fmu = damp_c(init_conv2d(c, 2 * c, 1, 1, rng, prec), rs_fmu);
        for (std::size_t l = 0; l < cfg.depth; ++l)
            lm.blocks.push_back(init_conv2d(c, c, 3, 3, rng, prec));
        p.lem.push_back(std::move(lm));
    }
    p.gem_head = {init_conv2d(c, n * c, 3, 3, rng, prec),
                  init_conv2d(2, c, 1, 1, rng, prec)};
    p.lem_head = {init_conv2d(c, n * c, 3, 3, rng, prec),
                  init_conv2d(2, c, 1, 1, rng, prec)};
    return p;
}

std::vector<Tensor> build_pyramid(const Tensor& x,
                                  const std::vector<std::size_t>& scales) {
    std::vector<Tensor> out;
    out.reserve(scales.size());
    for (std::size_t r : scales) out.push_back(adaptive_avg_pool(x, r, r));
    return out;
}

Tensor fmu_merge(const Tensor& xi_prime, const std::optional<Tensor>& prev,
                 const std::optional<Conv2DParams>& p) {
    if (!prev != !p)
        throw ShapeMismatch("fmu_merge: prev and params must come together");
    if (!prev) return xi_prime;
    const std::size_t r = xi_prime.extent(0);
    const Tensor resized = bilinear_resize(*prev, r, xi_prime.extent(1));
    const Tensor merged = conv2d(concat_lastdim({xi_prime, resized}), *p);
    return add(merged, xi_prime);
}

namespace {
Tensor reduce_channels(const Tensor& xi, const LinearParams& reducer) {
    const std::size_t r0 = xi.extent(0), r1 = xi.extent(1);
    const Tensor tokens = xi.reshaped({r0 * r1, xi.extent(2)});
    const Tensor reduced = linear(tokens, reducer.weight, reducer.bias);
    return reduced.reshaped({r0, r1, reduced.extent(1)});
}

Tensor aggregate_scales(const std::vector<Tensor>& outs, std::size_t r1) {
    std::vector<Tensor> resized;
    resized.reserve(outs.size());
    for (const Tensor& t : outs) resized.push_back(bilinear_resize(t, r1, r1));
    return concat_lastdim(resized);
}
} // namespace

Tensor gem_branch(const std::vector<Tensor>& pyramid,
                  const std::vector<GemScaleParams>& params,
                  const TrfsConfig& cfg) {
    if (pyramid.size() != params.size())
        throw ShapeMismatch("gem_branch: pyramid/params size disagree");
    std::vector<Tensor> outs;
    std::optional<Tensor> prev;
    for (std::size_t i = 0; i < pyramid.size(); ++i) {
        const Tensor xi_prime = reduce_channels(pyramid[i], params[i].reducer);
        Tensor y = fmu_merge(xi_prime, prev, params[i].fmu);
        const std::size_t r = y.extent(0);
        Tensor tokens = y.reshaped({r * r, y.extent(2)});
        for (const TransformerBlockParams& b : params[i].blocks)
            tokens = transformer_block(tokens, b, cfg.post_norm);
        // Parameter-free closing norm of the pre-norm stack: each channel is
        // standardized across the tokens. Without it the residual stream's
        // growth makes SGD at the default learning rate diverge, and a
        // per-token norm instead admits a collapse mode where every token
        // aligns with a shared direction and the head can only output a
        // constant; cross-token standardization rules that mode out.
        if (!cfg.post_norm && !params[i].blocks.empty())
            tokens = transpose2d(layer_norm(transpose2d(tokens),
                                            unit_layer_norm(tokens.extent(0))));
        Tensor ti = tokens.reshaped({r, r, y.extent(2)});
        prev = ti;
        outs.push_back(std::move(ti));
    }
    return aggregate_scales(outs, pyramid.front().extent(0));
}

Tensor lem_branch(const std::vector<Tensor>& pyramid,
                  const std::vector<LemScaleParams>& params) {
    if (pyramid.size() != params.size())
        throw ShapeMismatch("lem_branch: pyramid/params size disagree");
    std::vector<Tensor> outs;
    std::optional<Tensor> prev;
    for (std::size_t i = 0; i < pyramid.size(); ++i) {
        const Tensor xi_prime = reduce_channels(pyramid[i], params[i].reducer);
        Tensor z = fmu_merge(xi_prime, prev, params[i].fmu);
        for (const Conv2DParams& b : params[i].blocks)
            z = add(z, gelu(conv2d(z, b)));
        if (!params[i].blocks.empty()) {
            // same parameter-free cross-position standardization as the GEM
            // stack, for branch symmetry and scale-stable head inputs
            const std::size_t r = z.extent(0), c = z.extent(2);
            Tensor flat = z.reshaped({r * r, c});
            flat = transpose2d(layer_norm(transpose2d(flat),
                                          unit_layer_norm(r * r)));
            z = flat.reshaped({r, r, c});
        }
        prev = z;
        outs.push_back(std::move(z));
    }
    return aggregate_scales(outs, pyramid.front().extent(0));
}

Tensor cross_entropy_logits(const Tensor& logits, const Tensor& mask) {
    if (logits.rank() != 3 || logits.extent(2) != 2)
        throw ShapeMismatch("cross_entropy_logits: expect HxWx2 logits");
    if (mask.rank() != 2 || mask.extent(0) != logits.extent(0) ||
        mask.extent(1) != logits.extent(1))
        throw ShapeMismatch("cross_entropy_logits: mask shape disagrees");
    const std::size_t hw = mask.size();

    auto probs = std::make_shared<std::vector<double>>(hw * 2);
    double total = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        const double l0 = logits.at(p * 2), l1 = logits.at(p * 2 + 1);
        const double mx = std::max(l0, l1);
        const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        const double sum = e0 + e1;
        (*probs)[p * 2] = e0 / sum;
        (*probs)[p * 2 + 1] = e1 / sum;
        const double lse = mx + std::log(sum);
        total += lse - (mask.at(p) > 0.5 ? l1 : l0);
    }
    total /= static_cast<double>(hw);

    auto mk = mask.shared_data();
    return finish_op({1}, {total}, {&logits},
                     [probs, mk, hw](const std::vector<double>& g,
                                     const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         const double s = g[0] / static_cast<double>(hw);
                         for (std::size_t p = 0; p < hw; ++p) {
                             const bool fg = (*mk)[p] > 0.5;
                             (*gi[0])[p * 2] += s * ((*probs)[p * 2] - (fg ? 0.0 : 1.0));
                             (*gi[0])[p * 2 + 1] +=
                                 s * ((*probs)[p * 2 + 1] - (fg ? 1.0 : 0.0));
                         }
                     });
}

namespace {
Tensor head_logits(const Tensor& aggregate, const HeadParams& head,
                   std::size_t out_h, std::size_t out_w) {
    const Tensor h = gelu(conv2d(aggregate, head.conv3));
    const Tensor logits = conv2d(h, head.conv1);
    return bilinear_resize(logits, out_h, out_w);
}

} // namespace

Tensor fuse_episode(const Episode& ep, const BackboneParams& backbone) {
    const Tensor fq = extract(ep.query_image, backbone);
    const std::size_t fh = fq.extent(0), fw = fq.extent(1);

    std::vector<Tensor> fs;
    std::vector<Tensor> ms;
    for (std::size_t k = 0; k < ep.support_images.size(); ++k) {
        fs.push_back(extract(ep.support_images[k], backbone));
        ms.push_back(downsample_mask_nearest(ep.support_masks[k], fh, fw));
    }
    const Tensor proto = prototype(fs, ms);
    const Tensor prior = prior_mask_multi(fq, fs, ms);
    return fuse(fq, proto, prior);
}

ForwardResult forward_from_fused(const Tensor& fused, const Tensor& query_mask,
                                 const TrfsParams& params,
                                 const TrfsConfig& cfg) {
    cfg.validate();
    const std::vector<Tensor> pyramid = build_pyramid(fused, cfg.scales);
    const std::size_t mh = query_mask.extent(0);
    const std::size_t mw = query_mask.extent(1);

    ForwardResult res;
    Tensor total = Tensor::scalar(0.0, cfg.precision);
    if (cfg.mode != BranchMode::LemOnly) {
        const Tensor t = gem_branch(pyramid, params.gem, cfg);
        res.gem_logits = head_logits(t, params.gem_head, mh, mw);
        const Tensor l = cross_entropy_logits(*res.gem_logits, query_mask);
        res.report.l_gem = l.item();
        total = add(total, l);
    }
    if (cfg.mode != BranchMode::GemOnly) {
        const Tensor z = lem_branch(pyramid, params.lem);
        res.lem_logits = head_logits(z, params.lem_head, mh, mw);
        const Tensor l = cross_entropy_logits(*res.lem_logits, query_mask);
        res.report.l_lem = l.item();
        total = add(total, l);
    }
    res.report.total = res.report.l_gem + res.report.l_lem;
    res.loss_total = total;
    return res;
}

ForwardResult forward_loss(const Episode& episode, const TrfsParams& params,
                           const BackboneParams& backbone,
                           const TrfsConfig& cfg) {
    return forward_from_fused(fuse_episode(episode, backbone),
                              episode.query_mask, params, cfg);
}

Tensor head_average(const std::vector<Tensor>& logits_list,
                    bool average_logits) {
    if (logits_list.empty()) throw EmptyInput("head_average: no heads");
    const std::size_t hw = logits_list[0].size() / 2;
    std::vector<double> avg(hw * 2, 0.0);
    for (const Tensor& logits : logits_list) {
        if (logits.shape() != logits_list[0].shape())
            throw ShapeMismatch("head_average: head shapes differ");
        for (std::size_t p = 0; p < hw; ++p) {
            const double l0 = logits.at(p * 2), l1 = logits.at(p * 2 + 1);
            if (average_logits) {
                avg[p * 2] += l0;
                avg[p * 2 + 1] += l1;
            } else {
                const double mx = std::max(l0, l1);
                const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
                avg[p * 2] += e0 / (e0 + e1);
                avg[p * 2 + 1] += e1 / (e0 + e1);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(logits_list.size());
    for (double& v : avg) v *= inv;
    return Tensor(logits_list[0].shape(), std::move(avg));
}

Tensor infer(const Episode& episode, const TrfsParams& params,
             const BackboneParams& backbone, const TrfsConfig& cfg) {
    const ForwardResult res = forward_loss(episode, params, backbone, cfg);

    std::vector<Tensor> heads;
    if (res.gem_logits) heads.push_back(res.gem_logits->detached());
    if (res.lem_logits) heads.push_back(res.lem_logits->detached());
    const Tensor avg = head_average(heads, cfg.average_logits);

    const std::size_t hw = episode.query_mask.size();
    std::vector<double> pred(hw);
    for (std::size_t p = 0; p < hw; ++p)
        pred[p] = avg.at(p * 2 + 1) > avg.at(p * 2) ? 1.0 : 0.0;
    return Tensor(episode.query_mask.shape(), std::move(pred));
}

double poly_lr(const TrainHyper& h, std::size_t step) {
    const double frac = h.total_steps == 0
                            ? 0.0
                            : static_cast<double>(step) /
                                  static_cast<double>(h.total_steps);
    return h.base_lr * std::pow(1.0 - frac, h.poly_power);
}

void sgd_momentum_update(std::vector<double>& w, const std::vector<double>& g,
                         std::vector<double>& v, double lr, double momentum,
                         double weight_decay) {
    for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum * v[j] + g[j] + weight_decay * w[j];
        w[j] -= lr * v[j];
    }
}

LossReport train_step(const std::vector<Episode>& batch, TrfsParams& params,
                      const BackboneParams& backbone, const TrfsConfig& cfg,
                      OptimizerState& state, const TrainHyper& hyper) {
    if (batch.empty()) throw EmptyInput("train_step: empty batch");

    std::vector<std::string> names = params.names();
    std::vector<Tensor*> tensors = params.tensors();
    std::vector<bool> decay;
    params.visit([&](const std::string&, Tensor&, bool d) { decay.push_back(d); });

    std::vector<std::vector<double>> grad_sum(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i)
        grad_sum[i].assign(tensors[i]->size(), 0.0);

    LossReport report;
    for (const Episode& ep : batch) {
        GradientTape tape;
        TrfsParams watched = params; // shares data; tape links are per-copy
        watched.visit([&](const std::string&, Tensor& t, bool) { tape.watch(t); });
        const ForwardResult res = forward_loss(ep, watched, backbone, cfg);
        if (!std::isfinite(res.report.total))
            throw NonFiniteLoss("train_step: non-finite loss");
        report.l_gem += res.report.l_gem;
        report.l_lem += res.report.l_lem;
        tape.backward(res.loss_total);
        std::vector<Tensor*> wt = watched.tensors();
        for (std::size_t i = 0; i < wt.size(); ++i) {
            const std::vector<double>& g = tape.grad(*wt[i]);
            for (std::size_t j = 0; j < g.size(); ++j) grad_sum[i][j] += g[j];
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    report.l_gem *= inv_b;
    report.l_lem *= inv_b;
    report.total = report.l_gem + report.l_lem;

    const double lr = poly_lr(hyper, state.step);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        std::vector<double>& v = state.velocity[names[i]];
        if (v.empty()) v.assign(tensors[i]->size(), 0.0);
        std::vector<double> w(tensors[i]->data());
        for (double& g : grad_sum[i]) g *= inv_b;
        sgd_momentum_update(w, grad_sum[i], v, lr, hyper.momentum,
                            decay[i] ? hyper.weight_decay : 0.0);
        *tensors[i] = Tensor(tensors[i]->shape(), std::move(w), cfg.precision);
    }
    ++state.step;
    return report;
}

// --- checkpoints ---------------------------------------------------------------

namespace {
std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '.' || c == '/') c = '_';
    return out;
}
} // namespace

void save_checkpoint(const std::string& dir, TrfsParams& params,
                     BackboneParams& backbone, const std::string& fingerprint) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("save_checkpoint: cannot write manifest");
    manifest << "fingerprint " << fingerprint << "\n";

    auto dump = [&](const std::string& name, Tensor& t, bool) {
        const std::string file = sanitize(name) + ".trfs";
        save_tensor(dir + "/" + file, t);
        manifest << "tensor " << name << " " << file << "\n";
    };
    params.visit(dump);
    backbone.visit("backbone", dump);
    if (!manifest) throw IoError("save_checkpoint: write failed");
}

void load_checkpoint(const std::string& dir, TrfsParams& params,
                     BackboneParams& backbone,
                     const std::string& expected_fingerprint) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("load_checkpoint: cannot open manifest in " + dir);

    std::map<std::string, std::string> files;
    std::string fingerprint;
    std::string kind;
    while (manifest >> kind) {
        if (kind == "fingerprint") {
            manifest >> fingerprint;
        } else if (kind == "tensor") {
            std::string name, file;
            manifest >> name >> file;
            files[name] = file;
        } else {
            throw IoError("load_checkpoint: bad manifest line");
        }
    }
    if (!expected_fingerprint.empty() && fingerprint != expected_fingerprint)
        throw FingerprintMismatch("load_checkpoint: fingerprint " + fingerprint +
                                  " does not match config " +
                                  expected_fingerprint);

    auto fill = [&](const std::string& name, Tensor& t, bool) {
        auto it = files.find(name);
        if (it == files.end())
            throw IoError("load_checkpoint: missing tensor " + name);
        Tensor loaded = load_tensor(dir + "/" + it->second);
        if (loaded.shape() != t.shape())
            throw ShapeMismatch("load_checkpoint: shape mismatch for " + name);
        t = std::move(loaded);
    };
    params.visit(fill);
    backbone.visit("backbone", fill);
}

} // namespace trfs
