#include "trfs/eval.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

namespace trfs {

double iou(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeMismatch("iou: shapes differ");
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.at(i) > 0.5, g = gt.at(i) > 0.5;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0
                    : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
void accumulate_episode(FoldResult& res, const Tensor& pred, const Episode& ep) {
    ClassCounts& c = res.per_class[ep.class_id];
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.at(i) > 0.5, g = ep.query_mask.at(i) > 0.5;
        c.intersection += p && g;
        c.union_ += p || g;
    }
}
} // namespace

FoldResult evaluate_fold(const FoldSplit& split, const Model& model,
                         std::size_t n_episodes, std::size_t k,
                         std::uint64_t seed, std::size_t image_size,
                         std::size_t n_threads) {
    if (n_episodes < 1) throw ConfigError("evaluate_fold: n_episodes >= 1");
    FoldResult res;
    res.fold_index = split.fold_index;
    res.n_episodes = n_episodes;
    res.seed = seed;

    // episode seeds are a pure function of (seed, index); chunked execution
    // keeps count accumulation order-independent (integer sums)
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        FoldResult part;
        for (std::size_t e = lo; e < hi; ++e) {
            const Episode ep = sample_episode(split, EpisodeMode::Test, k,
                                              hash_combine(seed, e), image_size);
            accumulate_episode(part, model(ep), ep);
        }
        return part;
    };

    if (n_threads <= 1) {
        FoldResult part = run_range(0, n_episodes);
        res.per_class = std::move(part.per_class);
    } else {
        std::vector<std::future<FoldResult>> futures;
        const std::size_t chunk = (n_episodes + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(n_episodes, lo + chunk);
            if (lo >= hi) break;
            futures.push_back(
                std::async(std::launch::async, run_range, lo, hi));
        }
        for (auto& f : futures) {
            const FoldResult part = f.get();
            for (const auto& [cls, counts] : part.per_class) {
                res.per_class[cls].intersection += counts.intersection;
                res.per_class[cls].union_ += counts.union_;
            }
        }
    }

    double sum = 0.0;
    std::size_t n_classes = 0;
    for (int cls : split.test_classes) {
        const auto it = res.per_class.find(cls);
        double v = 1.0; // class never sampled: vacuous (cannot happen at n>=classes)
        if (it != res.per_class.end())
            v = it->second.union_ == 0
                    ? 1.0
                    : static_cast<double>(it->second.intersection) /
                          static_cast<double>(it->second.union_);
        res.per_class_iou[cls] = v;
        sum += v;
        ++n_classes;
    }
    res.miou = sum / static_cast<double>(n_classes);
    return res;
}

EvalReport cross_validate(
    const std::function<Model(const FoldSplit&)>& model_factory,
    std::size_t n_episodes, std::size_t k, std::uint64_t seed,
    std::size_t image_size, const std::string& config_hash,
    std::size_t n_threads) {
    EvalReport report;
    report.n_episodes_per_fold = n_episodes;
    report.seed = seed;
    report.config_hash = config_hash;
    const auto folds = make_folds();
    double sum = 0.0;
    for (const FoldSplit& split : folds) {
        const Model model = model_factory(split);
        report.folds.push_back(evaluate_fold(
            split, model, n_episodes, k,
            hash_combine(seed, static_cast<std::uint64_t>(split.fold_index)),
            image_size, n_threads));
        sum += report.folds.back().miou;
    }
    report.mean_miou = sum / static_cast<double>(report.folds.size());
    return report;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream out;
    out.precision(17);
    for (const FoldResult& f : report.folds)
        out << "fold_" << f.fold_index << " " << f.miou << "\n";
    out << "mean " << report.mean_miou << "\n";
    out << "n_episodes " << report.n_episodes_per_fold << "\n";
    out << "seed " << report.seed << "\n";
    out << "config_hash " << report.config_hash << "\n";
    return out.str();
}

void save_report(const std::string& path, const EvalReport& report) {
    std::ofstream f(path);
    if (!f) throw IoError("save_report: cannot open " + path);
    f << format_report(report);
    if (!f) throw IoError("save_report: write failed");
}

EvalReport parse_report(const std::string& text) {
    EvalReport report;
    std::istringstream in(text);
    std::string key;
    while (in >> key) {
        if (key.rfind("fold_", 0) == 0) {
            FoldResult f;
            f.fold_index = std::stoi(key.substr(5));
            in >> f.miou;
            report.folds.push_back(f);
        } else if (key == "mean") {
            in >> report.mean_miou;
        } else if (key == "n_episodes") {
            in >> report.n_episodes_per_fold;
        } else if (key == "seed") {
            in >> report.seed;
        } else if (key == "config_hash") {
            in >> report.config_hash;
        } else {
            throw IoError("parse_report: unknown key " + key);
        }
    }
    return report;
}

} // namespace trfs
