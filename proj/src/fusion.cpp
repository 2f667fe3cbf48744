#include "trfs/fusion.hpp"

#include <cmath>
#include <string>

namespace trfs {

using detail::finish_op;

Tensor masked_gap(const Tensor& f, const Tensor& m) {
    if (f.rank() != 3 || m.rank() != 2 || f.extent(0) != m.extent(0) ||
        f.extent(1) != m.extent(1))
        throw ShapeMismatch("masked_gap: feature/mask shapes disagree");
    const std::size_t hw = m.size(), c = f.extent(2);

    std::vector<std::size_t> fg;
    for (std::size_t p = 0; p < hw; ++p)
        if (m.at(p) > 0.5) fg.push_back(p);
    if (fg.empty()) throw EmptySupportMask("masked_gap: all-zero mask");

    const double inv = 1.0 / static_cast<double>(fg.size());
    std::vector<double> d(c, 0.0);
    for (std::size_t p : fg)
        for (std::size_t j = 0; j < c; ++j) d[j] += f.at(p * c + j) * inv;

    return finish_op({c}, std::move(d), {&f},
                     [fg, c, inv](const std::vector<double>& g,
                                  const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t p : fg)
                             for (std::size_t j = 0; j < c; ++j)
                                 (*gi[0])[p * c + j] += g[j] * inv;
                     });
}

Tensor prototype(const std::vector<Tensor>& support_features,
                 const std::vector<Tensor>& support_masks) {
    if (support_features.empty() ||
        support_features.size() != support_masks.size())
        throw ShapeMismatch("prototype: bad support set");
    Tensor acc;
    for (std::size_t k = 0; k < support_features.size(); ++k) {
        Tensor gap;
        try {
            gap = masked_gap(support_features[k], support_masks[k]);
        } catch (const EmptySupportMask&) {
            throw EmptySupportMask("prototype: empty mask in shot " +
                                   std::to_string(k));
        }
        acc = k == 0 ? gap : add(acc, gap);
    }
    return scale(acc, 1.0 / static_cast<double>(support_features.size()));
}

Tensor prior_mask(const Tensor& fq, const Tensor& fs, const Tensor& m) {
    if (fq.shape() != fs.shape())
        throw ShapeMismatch("prior_mask: feature shapes disagree");
    const std::size_t h = fq.extent(0), w = fq.extent(1), c = fq.extent(2);
    if (m.rank() != 2 || m.extent(0) != h || m.extent(1) != w)
        throw ShapeMismatch("prior_mask: mask shape disagrees");

    std::vector<std::size_t> fg;
    for (std::size_t p = 0; p < h * w; ++p)
        if (m.at(p) > 0.5) fg.push_back(p);
    if (fg.empty()) throw EmptySupportMask("prior_mask: all-zero mask");

    // fixed guidance signal: computed on detached values, never taped
    const auto& Q = fq.data();
    const auto& S = fs.data();
    std::vector<double> snorm(fg.size());
    for (std::size_t qi = 0; qi < fg.size(); ++qi) {
        double n = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double v = S[fg[qi] * c + j];
            n += v * v;
        }
        snorm[qi] = std::sqrt(n);
    }

    std::vector<double> score(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
        double nq = 0.0;
        for (std::size_t j = 0; j < c; ++j) nq += Q[p * c + j] * Q[p * c + j];
        nq = std::sqrt(nq);
        double best = -2.0;
        for (std::size_t qi = 0; qi < fg.size(); ++qi) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                dot += Q[p * c + j] * S[fg[qi] * c + j];
            best = std::max(best, dot / (nq * snorm[qi] + 1e-8));
        }
        score[p] = best;
    }

    double lo = score[0], hi = score[0];
    for (double s : score) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    for (double& s : score) s = (s - lo) / (hi - lo + 1e-7);
    return Tensor({h, w}, std::move(score), fq.precision());
}

Tensor prior_mask_multi(const Tensor& fq,
                        const std::vector<Tensor>& support_features,
                        const std::vector<Tensor>& support_masks) {
    if (support_features.empty() ||
        support_features.size() != support_masks.size())
        throw ShapeMismatch("prior_mask_multi: bad support set");
    Tensor acc;
    for (std::size_t k = 0; k < support_features.size(); ++k) {
        const Tensor p = prior_mask(fq, support_features[k], support_masks[k]);
        acc = k == 0 ? p : add(acc, p);
    }
    return scale(acc, 1.0 / static_cast<double>(support_features.size()))
        .detached();
}

Tensor fuse(const Tensor& fq, const Tensor& proto, const Tensor& prior) {
    const std::size_t h = fq.extent(0), w = fq.extent(1), c = fq.extent(2);
    if (proto.rank() != 1 || proto.extent(0) != c)
        throw ShapeMismatch("fuse: prototype extent disagrees");
    if (prior.rank() != 2 || prior.extent(0) != h || prior.extent(1) != w)
        throw ShapeMismatch("fuse: prior shape disagrees");
    return concat_lastdim({fq, broadcast_to_map(proto, h, w),
                           prior.reshaped({h, w, 1})});
}

} // namespace trfs
