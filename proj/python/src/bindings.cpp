#include "fedgen/balanced_sampler.hpp"
#include "fedgen/config.hpp"
#include "fedgen/dataset.hpp"
#include "fedgen/diffusion.hpp"
#include "fedgen/error.hpp"
#include "fedgen/evaluation.hpp"
#include "fedgen/generative_memory.hpp"
#include "fedgen/local_training.hpp"
#include "fedgen/run_io.hpp"
#include "fedgen/runtime.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

namespace py = pybind11;
using namespace fedgen;

namespace {

using Images = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (n, C, H, W) float array plus int labels.
py::tuple dataset_to_numpy(const Dataset& d) {
    const auto& s = d.shape;
    Images images({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(s.channels),
                   static_cast<py::ssize_t>(s.height), static_cast<py::ssize_t>(s.width)});
    py::array_t<int> labels(static_cast<py::ssize_t>(d.size()));
    auto img = images.mutable_unchecked<4>();
    auto lab = labels.mutable_unchecked<1>();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& ex = d.examples[i];
        lab(static_cast<py::ssize_t>(i)) = ex.label;
        std::copy(ex.image.begin(), ex.image.end(), img.mutable_data(static_cast<py::ssize_t>(i), 0, 0, 0));
    }
    return py::make_tuple(images, labels, d.num_classes);
}

Dataset dataset_from_numpy(Images images, py::array_t<int> labels, int num_classes) {
    if (images.ndim() != 4) throw ShapeError("images must have shape (n, channels, height, width)");
    if (labels.ndim() != 1 || labels.shape(0) != images.shape(0)) throw ShapeError("one label per image required");
    Dataset d;
    d.shape = {static_cast<int>(images.shape(1)), static_cast<int>(images.shape(2)), static_cast<int>(images.shape(3))};
    d.num_classes = num_classes;
    const auto per = static_cast<std::size_t>(d.shape.size());
    for (py::ssize_t i = 0; i < images.shape(0); ++i) {
        const float* p = images.data(i, 0, 0, 0);
        d.examples.push_back({std::vector<Real>(p, p + per), labels.at(i)});
    }
    return d;
}

py::dict parse_ini_text(const std::string& text) {
    py::dict out;
    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.front() == '[') {
            section = line.substr(1, line.find(']') - 1);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[py::str(section + "." + line.substr(0, eq))] = line.substr(eq + 1);
    }
    return out;
}

RunConfig config_from(const std::string& profile, const py::dict& settings) {
    RunConfig c = profile_by_name(profile);
    for (auto [k, v] : settings) {
        std::string value;
        if (py::isinstance<py::bool_>(v))
            value = v.cast<bool>() ? "on" : "off";
        else
            value = py::str(v).cast<std::string>();
        apply_setting(c, k.cast<std::string>(), value);
    }
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Federated class-incremental learning with diffusion replay (C++ core)";
    tune_allocator();

    py::register_exception<Error>(m, "FedgenError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def(
        "synth_dataset",
        [](int classes, int per_class, std::tuple<int, int, int> shape, std::uint64_t seed) {
            auto [c, h, w] = shape;
            return dataset_to_numpy(synth_dataset(classes, per_class, {c, h, w}, seed));
        },
        py::arg("classes"), py::arg("per_class"), py::arg("shape") = std::make_tuple(1, 16, 16), py::arg("seed") = 0,
        "Procedural dataset as (images[n,C,H,W], labels[n], num_classes).");
    m.def("read_bundle", [](const std::filesystem::path& p) { return dataset_to_numpy(ingest_bundle(p)); });
    m.def(
        "write_bundle",
        [](const std::filesystem::path& p, Images images, py::array_t<int> labels, int num_classes) {
            write_bundle(dataset_from_numpy(std::move(images), std::move(labels), num_classes), p);
        },
        py::arg("path"), py::arg("images"), py::arg("labels"), py::arg("num_classes"));

    m.def(
        "plan_epoch",
        [](const std::vector<std::vector<std::size_t>>& shard, int batch_size, std::uint64_t seed) {
            const auto plan = plan_epoch(shard, batch_size, seed);
            py::list batches;
            for (const auto& b : plan.batches) {
                py::list items;
                for (const auto& r : b) items.append(py::make_tuple(r.class_id, r.index));
                batches.append(items);
            }
            py::dict d;
            d["batches"] = batches;
            d["per_class_quota"] = plan.per_class_quota;
            d["num_batches"] = plan.num_batches;
            d["majority_size"] = plan.majority_size;
            return d;
        },
        py::arg("shard"), py::arg("batch_size"), py::arg("seed") = 0);

    m.def("prediction_entropy", [](const std::vector<double>& p) { return prediction_entropy(p); });
    m.def("generation_count", &generation_count, py::arg("samples"), py::arg("lam"));
    m.def("retention_count", &retention_count, py::arg("count"), py::arg("lam"));
    m.def(
        "entropy_filter_mask",
        [](const std::vector<double>& h, double lam, const std::string& direction) {
            if (direction != "high" && direction != "low") throw ConfigError("direction must be 'high' or 'low'");
            const auto mask = entropy_filter_mask(h, lam, direction == "high" ? FilterDirection::high : FilterDirection::low);
            return std::vector<bool>(mask.begin(), mask.end());
        },
        py::arg("entropies"), py::arg("lam"), py::arg("direction") = "high");

    // Loss terms on (classes, batch) / (features, batch) column layouts.
    m.def("ce_loss", [](const nn::Act& logits, const std::vector<int>& labels) { return ce_loss(logits, labels); });
    m.def(
        "kd_loss",
        [](const nn::Act& s, const nn::Act& t, double tau, const std::string& direction) {
            return kd_loss(s, t, tau,
                           direction == "teacher_to_student" ? KdDirection::teacher_to_student : KdDirection::student_to_teacher);
        },
        py::arg("student_logits"), py::arg("teacher_logits"), py::arg("temperature") = 1.0,
        py::arg("direction") = "student_to_teacher");
    m.def("fd_loss", [](const nn::Act& s, const nn::Act& t) { return fd_loss(s, t); });

    m.def(
        "linear_schedule",
        [](int steps, double beta_start, double beta_end) {
            const auto s = NoiseSchedule::linear(steps, beta_start, beta_end);
            py::dict d;
            d["betas"] = s.betas;
            d["alphas"] = s.alphas;
            d["alpha_bars"] = s.alpha_bars;
            d["sigmas"] = s.sigmas;
            return d;
        },
        py::arg("steps"), py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);

    m.def(
        "metrics_from_csv",
        [](const std::string& text) {
            const auto rec = parse_metrics_csv(text);
            py::dict d;
            d["Acc"] = average_accuracy(rec);
            d["F"] = rec.num_tasks >= 2 ? py::cast(average_forgetting(rec)) : py::none();
            return d;
        },
        "Average accuracy and forgetting from metrics.csv text.");

    m.def("config_keys", &config_keys);
    m.def(
        "profile",
        [](const std::string& name) { return parse_ini_text(config_to_ini(profile_by_name(name))); },
        py::arg("name") = "desk", "Every setting of a profile as a flat {'section.key': value} dict.");
    m.def(
        "run",
        [](const std::filesystem::path& out, const std::string& profile, const py::dict& settings) {
            const RunConfig c = config_from(profile, settings);
            {
                py::gil_scoped_release release;
                execute_run(c, out);
            }
            return py::module_::import("json").attr("loads")(slurp(out / "summary.json"));
        },
        py::arg("out"), py::arg("profile") = "desk", py::arg("settings") = py::dict(),
        "Runs an experiment into `out` and returns the parsed summary.json.");
    m.def(
        "report",
        [](const std::filesystem::path& dir, bool plots) {
            const Report r = report_run(dir, plots);
            py::dict d;
            d["Acc"] = r.acc;
            d["F"] = r.forgetting ? py::cast(*r.forgetting) : py::none();
            d["summary_present"] = r.summary_present;
            d["matches_summary"] = r.matches_summary;
            return d;
        },
        py::arg("dir"), py::arg("plots") = false);
}
