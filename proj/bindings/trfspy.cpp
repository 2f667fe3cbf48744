// Python bindings for the trfs core library. Tensors cross the boundary as
// float64 numpy arrays (copied, never aliased); the stateful model lives in a
// TrfsModel object mirroring the CLI's seeding scheme.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "trfs/config.hpp"
#include "trfs/eval.hpp"
#include "trfs/golden.hpp"

namespace py = pybind11;
using namespace trfs;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape[static_cast<std::size_t>(i)] =
            static_cast<std::size_t>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

BranchMode parse_mode(const std::string& mode) {
    if (mode == "gem") return BranchMode::GemOnly;
    if (mode == "lem") return BranchMode::LemOnly;
    if (mode == "both") return BranchMode::Both;
    throw py::value_error("mode must be 'gem', 'lem' or 'both'");
}

// same stream constants as the CLI, so python runs line up with it
constexpr std::uint64_t kBackboneStream = 0xB8B0;
constexpr std::uint64_t kParamStream = 0x9A7A;

struct PyModel {
    TrfsConfig cfg;
    BackboneParams backbone;
    TrfsParams params;
    OptimizerState state;
    TrainHyper hyper;

    PyModel(std::size_t channels, std::size_t heads, std::size_t mlp_ratio,
            std::size_t depth, std::vector<std::size_t> scales,
            const std::string& mode, std::uint64_t seed, double base_lr,
            std::size_t total_steps) {
        cfg.channels = channels;
        cfg.heads = heads;
        cfg.mlp_ratio = mlp_ratio;
        cfg.depth = depth;
        cfg.scales = std::move(scales);
        cfg.mode = parse_mode(mode);
        cfg.precision = Precision::Fast;
        cfg.validate();
        backbone = init_backbone(channels, hash_combine(seed, kBackboneStream),
                                 cfg.precision);
        params = init_trfs_params(cfg, hash_combine(seed, kParamStream));
        hyper.base_lr = base_lr;
        hyper.total_steps = total_steps;
    }

    py::dict loss(const Episode& ep) const {
        const LossReport r = forward_loss(ep, params, backbone, cfg).report;
        py::dict out;
        out["l_gem"] = r.l_gem;
        out["l_lem"] = r.l_lem;
        out["total"] = r.total;
        return out;
    }

    py::dict step(const std::vector<Episode>& batch) {
        const LossReport r =
            train_step(batch, params, backbone, cfg, state, hyper);
        py::dict out;
        out["l_gem"] = r.l_gem;
        out["l_lem"] = r.l_lem;
        out["total"] = r.total;
        out["step"] = state.step;
        return out;
    }

    py::array_t<double> predict(const Episode& ep) const {
        return to_numpy(infer(ep, params, backbone, cfg));
    }

    py::dict evaluate(int fold, std::size_t n_episodes, std::size_t k,
                      std::uint64_t seed, std::size_t image_size,
                      std::size_t threads) const {
        const auto folds = make_folds();
        if (fold < 0 || fold > 3) throw py::value_error("fold must be 0..3");
        const Model model = [this](const Episode& ep) {
            return infer(ep, params, backbone, cfg);
        };
        const FoldResult r =
            evaluate_fold(folds[static_cast<std::size_t>(fold)], model,
                          n_episodes, k, seed, image_size, threads);
        py::dict per_class;
        for (const auto& [cls, v] : r.per_class_iou)
            per_class[py::int_(cls)] = v;
        py::dict out;
        out["miou"] = r.miou;
        out["per_class_iou"] = per_class;
        out["n_episodes"] = r.n_episodes;
        return out;
    }

    void save(const std::string& dir, const std::string& fingerprint) {
        save_checkpoint(dir, params, backbone, fingerprint);
    }
    void load(const std::string& dir, const std::string& fingerprint) {
        load_checkpoint(dir, params, backbone, fingerprint);
    }
};

} // namespace

PYBIND11_MODULE(trfspy, m) {
    m.doc() = "few-shot segmentation core: data, fusion ops, model, eval";

    py::class_<Episode>(m, "Episode")
        .def_property_readonly(
            "query_image", [](const Episode& e) { return to_numpy(e.query_image); })
        .def_property_readonly(
            "query_mask", [](const Episode& e) { return to_numpy(e.query_mask); })
        .def_property_readonly("support_images",
                               [](const Episode& e) {
                                   py::list out;
                                   for (const Tensor& t : e.support_images)
                                       out.append(to_numpy(t));
                                   return out;
                               })
        .def_property_readonly("support_masks",
                               [](const Episode& e) {
                                   py::list out;
                                   for (const Tensor& t : e.support_masks)
                                       out.append(to_numpy(t));
                                   return out;
                               })
        .def_readonly("class_id", &Episode::class_id)
        .def_readonly("seed", &Episode::seed);

    m.def("shape_class_name", &shape_class_name, py::arg("class_id"));

    m.def(
        "render_scene",
        [](int class_id, std::uint64_t seed, std::size_t height,
           std::size_t width) {
            const Scene s = render_scene(class_id, seed, height, width);
            return py::make_tuple(to_numpy(s.image), to_numpy(s.mask));
        },
        py::arg("class_id"), py::arg("seed"), py::arg("height") = 64,
        py::arg("width") = 64,
        "Render one scene; returns (image [H,W,3], mask [H,W]).");

    m.def(
        "sample_episode",
        [](int fold, const std::string& mode, std::size_t k,
           std::uint64_t seed, std::size_t image_size) {
            if (fold < 0 || fold > 3)
                throw py::value_error("fold must be 0..3");
            const auto folds = make_folds();
            return sample_episode(folds[static_cast<std::size_t>(fold)],
                                  mode == "train" ? EpisodeMode::Train
                                                  : EpisodeMode::Test,
                                  k, seed, image_size);
        },
        py::arg("fold"), py::arg("mode"), py::arg("k") = 1, py::arg("seed") = 1,
        py::arg("image_size") = 64,
        "Deterministic episode from a fold's train or test classes.");

    m.def("fold_classes", [](int fold) {
        if (fold < 0 || fold > 3) throw py::value_error("fold must be 0..3");
        const FoldSplit f = make_folds()[static_cast<std::size_t>(fold)];
        return py::make_tuple(f.train_classes, f.test_classes);
    });

    // --- stateless ops ------------------------------------------------------
    using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

    m.def("gelu", [](const Arr& x) { return to_numpy(gelu(from_numpy(x))); });
    m.def("conv2d", [](const Arr& x, const Arr& kernel, const Arr& bias) {
        const Conv2DParams p{from_numpy(kernel), from_numpy(bias)};
        return to_numpy(conv2d(from_numpy(x), p));
    });
    m.def("adaptive_avg_pool",
          [](const Arr& x, std::size_t out_h, std::size_t out_w) {
              return to_numpy(adaptive_avg_pool(from_numpy(x), out_h, out_w));
          });
    m.def("bilinear_resize",
          [](const Arr& x, std::size_t out_h, std::size_t out_w) {
              return to_numpy(bilinear_resize(from_numpy(x), out_h, out_w));
          });
    m.def("layer_norm",
          [](const Arr& x, const Arr& gamma, const Arr& beta, double eps) {
              LayerNormParams p{from_numpy(gamma), from_numpy(beta), eps};
              return to_numpy(layer_norm(from_numpy(x), p));
          },
          py::arg("x"), py::arg("gamma"), py::arg("beta"),
          py::arg("eps") = 1e-5);
    m.def("mhsa",
          [](const Arr& x, const Arr& wq, const Arr& bq, const Arr& wk,
             const Arr& bk, const Arr& wv, const Arr& bv, const Arr& wo,
             const Arr& bo, std::size_t heads) {
              MHSAParams p;
              p.wq = {from_numpy(wq), from_numpy(bq)};
              p.wk = {from_numpy(wk), from_numpy(bk)};
              p.wv = {from_numpy(wv), from_numpy(bv)};
              p.wo = {from_numpy(wo), from_numpy(bo)};
              p.heads = heads;
              return to_numpy(mhsa(from_numpy(x), p));
          });
    m.def("masked_gap", [](const Arr& f, const Arr& mask) {
        return to_numpy(masked_gap(from_numpy(f), from_numpy(mask)));
    });
    m.def("prior_mask", [](const Arr& fq, const Arr& fs, const Arr& mask) {
        return to_numpy(prior_mask(from_numpy(fq), from_numpy(fs),
                                   from_numpy(mask)));
    });
    m.def("fuse", [](const Arr& fq, const Arr& proto, const Arr& prior) {
        return to_numpy(fuse(from_numpy(fq), from_numpy(proto),
                             from_numpy(prior)));
    });
    m.def("iou", [](const Arr& pred, const Arr& gt) {
        return iou(from_numpy(pred), from_numpy(gt));
    });

    // --- TensorFile ----------------------------------------------------------
    m.def("save_tensor", [](const std::string& path, const Arr& t) {
        save_tensor(path, from_numpy(t));
    });
    m.def("load_tensor",
          [](const std::string& path) { return to_numpy(load_tensor(path)); });

    // --- model ---------------------------------------------------------------
    py::class_<PyModel>(m, "TrfsModel")
        .def(py::init<std::size_t, std::size_t, std::size_t, std::size_t,
                      std::vector<std::size_t>, const std::string&,
                      std::uint64_t, double, std::size_t>(),
             py::arg("channels") = 32, py::arg("heads") = 8,
             py::arg("mlp_ratio") = 4, py::arg("depth") = 3,
             py::arg("scales") = std::vector<std::size_t>{8, 4, 2},
             py::arg("mode") = "both", py::arg("seed") = 1,
             py::arg("base_lr") = 0.025, py::arg("total_steps") = 400)
        .def("loss", &PyModel::loss, py::arg("episode"))
        .def("train_step", &PyModel::step, py::arg("batch"))
        .def("infer", &PyModel::predict, py::arg("episode"))
        .def("evaluate", &PyModel::evaluate, py::arg("fold"),
             py::arg("n_episodes") = 100, py::arg("k") = 1, py::arg("seed") = 1,
             py::arg("image_size") = 64, py::arg("threads") = 1)
        .def("save_checkpoint", &PyModel::save, py::arg("dir"),
             py::arg("fingerprint") = "")
        .def("load_checkpoint", &PyModel::load, py::arg("dir"),
             py::arg("fingerprint") = "");
}
