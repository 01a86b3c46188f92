#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "coca/capsule.hpp"
#include "coca/checkpoint.hpp"
#include "coca/cifar.hpp"
#include "coca/config.hpp"
#include "coca/knn.hpp"
#include "coca/model.hpp"
#include "coca/nt_xent.hpp"
#include "coca/profiler.hpp"
#include "coca/trainer.hpp"

namespace py = pybind11;
using namespace coca;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
    py::array_t<T> out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

ModelConfig model_config(const py::dict& overrides) {
    ModelConfig cfg;
    for (const auto& [k, v] : overrides) {
        const auto key = py::str(k).cast<std::string>();
        std::string value;
        if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
            for (const auto& item : v) value += (value.empty() ? "" : ",") + py::str(item).cast<std::string>();
        } else if (py::isinstance<py::bool_>(v)) {
            value = v.cast<bool>() ? "true" : "false";
        } else {
            value = py::str(v).cast<std::string>();
        }
        if (!apply_key(cfg, key, value)) throw py::key_error("unknown model key: " + key);
    }
    cfg.validate();
    return cfg;
}

py::dict to_dict(const KeyValues& kv) {
    py::dict d;
    for (const auto& [k, v] : kv) d[py::str(k)] = v;
    return d;
}

// Float network wrapper: eval-mode inference on standardized images.
struct Model {
    CapsuleNetwork<float> net;
    std::optional<data::NormalizationStats> stats;

    py::tuple forward(const Array<float>& x, bool train_mode) {
        const auto out = net.forward(to_tensor(x), train_mode ? Mode::train : Mode::eval, nullptr, false);
        return py::make_tuple(to_array(out.z), to_array(out.h));
    }
};

}  // namespace

PYBIND11_MODULE(_coca, m) {
    m.doc() = "Siamese capsule network with NT-Xent: kernels, model inference and profiler";

    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<data::DataError>(m, "DataError", PyExc_RuntimeError);

    m.def("squash", [](const Array<double>& s) { return to_array(caps::squash(to_tensor(s))); }, py::arg("s"),
          "Squash along the last axis.");

    m.def(
        "dynamic_routing",
        [](const Array<double>& votes, std::size_t iterations) {
            if (votes.ndim() != 3) throw py::value_error("votes must be [children, parents, dim]");
            const auto r = caps::dynamic_routing(to_tensor(votes), iterations);
            return py::make_tuple(to_array(r.output), to_array(r.state.couplings), to_array(r.state.logits));
        },
        py::arg("votes"), py::arg("iterations") = 3, "Returns (outputs, final couplings, final logits).");

    m.def(
        "nt_xent", [](const Array<double>& z, double tau) { return loss::nt_xent(to_tensor(z), tau); }, py::arg("z"),
        py::arg("temperature") = 0.2, "Mean NT-Xent over all 2N anchors; row a+N is the positive of row a.");

    m.def(
        "nt_xent_with_grad",
        [](const Array<double>& z, double tau) {
            const auto r = loss::nt_xent_with_grad(to_tensor(z), tau);
            return py::make_tuple(r.loss, to_array(r.grad));
        },
        py::arg("z"), py::arg("temperature") = 0.2);

    m.def(
        "knn_predict",
        [](const Array<float>& sims, const Array<std::uint8_t>& labels, std::size_t k, double tau,
           std::size_t classes) {
            knn::EvalConfig cfg{k, tau, classes};
            const auto p = knn::predict_from_similarities(std::span<const float>(sims.data(), sims.size()),
                                                          std::span<const std::uint8_t>(labels.data(), labels.size()),
                                                          cfg);
            return py::make_tuple(p.scores, p.ranked);
        },
        py::arg("similarities"), py::arg("labels"), py::arg("k") = 200, py::arg("temperature") = 0.2,
        py::arg("classes") = 10, "Weighted kNN class scores and the ranked class list.");

    m.def(
        "knn_evaluate",
        [](const Array<float>& bank, const Array<std::uint8_t>& bank_labels, const Array<float>& queries,
           const Array<std::uint8_t>& query_labels, std::size_t k, double tau) {
            knn::FeatureBank fb{to_tensor(bank), std::vector<std::uint8_t>(bank_labels.data(),
                                                                           bank_labels.data() + bank_labels.size())};
            const auto r = knn::evaluate_features(fb, to_tensor(queries),
                                                  std::span<const std::uint8_t>(query_labels.data(), query_labels.size()),
                                                  knn::EvalConfig{k, tau, 10});
            return py::make_tuple(r.top1(), r.top5());
        },
        py::arg("bank"), py::arg("bank_labels"), py::arg("queries"), py::arg("query_labels"), py::arg("k") = 200,
        py::arg("temperature") = 0.2, "Top-1 and top-5 accuracy in percent.");

    m.def(
        "profile",
        [](const py::dict& overrides, const std::string& convention) {
            const auto r = profile::count_flops(model_config(overrides), convention);
            py::list layers;
            for (const auto& l : r.layers) {
                py::dict d;
                d["name"] = l.name;
                d["block"] = l.block;
                d["params"] = l.params;
                d["macs"] = l.macs;
                d["output_shape"] = l.output_shape;
                layers.append(d);
            }
            py::dict out;
            out["layers"] = layers;
            out["total_params"] = r.total_params();
            out["conv_macs"] = r.conv_macs;
            out["vote_macs"] = r.vote_macs;
            out["routing_macs"] = r.routing_macs();
            out["headline_flops"] = r.headline_flops();
            out["table"] = profile::format_table(r);
            out["audit"] = profile::format_audit(profile::audit_against_reference(r));
            return out;
        },
        py::arg("model") = py::dict(), py::arg("convention") = "macs");

    m.def(
        "read_batch_file",
        [](const std::string& path) {
            const auto recs = data::read_batch_file(path);
            py::array_t<std::uint8_t> images({static_cast<py::ssize_t>(recs.size()), py::ssize_t{3}, py::ssize_t{32},
                                              py::ssize_t{32}});
            py::array_t<std::uint8_t> labels(static_cast<py::ssize_t>(recs.size()));
            for (std::size_t i = 0; i < recs.size(); ++i) {
                std::copy(recs[i].pixels.begin(), recs[i].pixels.end(), images.mutable_data() + i * data::kPixelBytes);
                labels.mutable_data()[i] = recs[i].label;
            }
            return py::make_tuple(images, labels);
        },
        py::arg("path"), "One CIFAR-10 binary batch as (uint8 [n,3,32,32], uint8 [n]).");

    py::class_<Model>(m, "Model")
        .def(py::init([](std::uint64_t seed, const py::dict& overrides) {
                 return Model{CapsuleNetwork<float>::initialized(model_config(overrides), seed), std::nullopt};
             }),
             py::arg("seed") = 0, py::arg("model") = py::dict())
        .def_static(
            "from_checkpoint",
            [](const std::string& path) {
                auto s = train::TrainState::from_checkpoint(read_checkpoint(path));
                return Model{std::move(s.network), s.stats};
            },
            py::arg("path"))
        .def("forward", &Model::forward, py::arg("x"), py::arg("train_mode") = false,
             "Returns (z, h) for standardized images [B,3,32,32]. Running statistics are not updated.")
        .def_property_readonly("config", [](const Model& m) { return to_dict(to_key_values(m.net.config())); })
        .def_property_readonly("parameter_count",
                               [](Model& m) {
                                   std::size_t n = 0;
                                   m.net.params().visit([&](const std::string&, const Tensor<float>& t, bool trainable) {
                                       if (trainable) n += t.size();
                                   });
                                   return n;
                               })
        .def_property_readonly("normalization", [](const Model& m) -> py::object {
            if (!m.stats) return py::none();
            return to_dict(to_key_values(*m.stats));
        });
}
