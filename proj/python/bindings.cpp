#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>

#include "ctxlog/detection.hpp"
#include "ctxlog/errors.hpp"
#include "ctxlog/pipeline.hpp"
#include "ctxlog/scoring.hpp"
#include "ctxlog/synth.hpp"
#include "ctxlog/tokenizer.hpp"
#include "ctxlog/training.hpp"

namespace py = pybind11;
using namespace ctxlog;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
Matrix<T> to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ShapeMismatch("expected a 2-d array");
    const auto r = a.unchecked<2>();
    Matrix<T> m(static_cast<std::size_t>(r.shape(0)), static_cast<std::size_t>(r.shape(1)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i)
        for (py::ssize_t j = 0; j < r.shape(1); ++j) m(i, j) = static_cast<T>(r(i, j));
    return m;
}

Array to_array(const Matrix<double>& m) {
    Array a({m.rows(), m.cols()});
    std::copy(m.storage().begin(), m.storage().end(), a.mutable_data());
    return a;
}

ScoreVector to_score(const std::array<double, 4>& v) { return {v[0], v[1], v[2], v[3]}; }

using Stage = std::function<nlohmann::json(const RunConfig&)>;

const std::map<std::string, Stage>& stages() {
    static const std::map<std::string, Stage> table{
        {"synth", stage_synth},
        {"prepare", stage_prepare},
        {"fit-tokenizer", stage_fit_tokenizer},
        {"train", [](const RunConfig& c) { return stage_train(c); }},
        {"calibrate", stage_calibrate},
        {"score", stage_score},
        {"evaluate", stage_evaluate},
        {"ablate", stage_ablate},
        {"sweep-threshold", stage_sweep_threshold},
        {"perturb", stage_perturb},
        {"contaminate", stage_contaminate},
        {"sweep-reference", stage_sweep_reference},
        {"cache-stats", stage_cache_stats},
    };
    return table;
}

} // namespace

PYBIND11_MODULE(_ctxlog, m) {
    m.doc() = "Log anomaly detection core";

    // Kept alive for the interpreter's lifetime.
    static py::handle error_type =
        PyErr_NewException("ctxlog._ctxlog.CtxlogError", PyExc_RuntimeError, nullptr);
    m.attr("CtxlogError") = error_type;
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
            inst.attr("kind") = e.kind();
            PyErr_SetObject(error_type.ptr(), inst.ptr());
        }
    });

    py::class_<BpeVocab>(m, "BpeVocab")
        .def_property_readonly("vocab_size", &BpeVocab::vocab_size)
        .def_property_readonly("fitted_size", &BpeVocab::fitted_size)
        .def_property_readonly("merges", &BpeVocab::merges)
        .def("encode", [](const BpeVocab& v, py::bytes text) { return v.encode_all(std::string(text)); })
        .def("decode", [](const BpeVocab& v, const std::vector<TokenId>& ids) { return py::bytes(v.decode(ids)); })
        .def("to_json", &BpeVocab::to_json)
        .def_static("from_json", [](const std::string& s) { return BpeVocab::from_json(s); })
        .def("__eq__", [](const BpeVocab& a, const BpeVocab& b) { return a == b; });

    m.def("fit_bpe", [](const std::vector<std::string>& corpus, std::size_t vocab_size) {
        return fit_bpe(corpus, vocab_size);
    }, py::arg("corpus"), py::arg("vocab_size"));

    m.def("symmetric_info_nce", [](const Array& e_hat, const Array& e, double tau) {
        const auto a = to_matrix<double>(e_hat), b = to_matrix<double>(e);
        Matrix<double> ga, gb;
        const double loss = symmetric_info_nce(a, b, tau, &ga, &gb);
        return py::make_tuple(loss, to_array(ga), to_array(gb));
    }, py::arg("e_hat"), py::arg("e"), py::arg("tau") = 0.25,
       "Loss and its gradients with respect to both inputs.");

    m.def("point_scores", [](const Array& reference, const Array& queries) {
        const auto rows = to_matrix<float>(reference);
        return point_scores(make_reference_index(rows, rows.rows()), to_matrix<float>(queries));
    }, py::arg("reference"), py::arg("queries"));

    m.def("lower_median", &lower_median);
    m.def("nearest_rank", &nearest_rank, py::arg("values"), py::arg("percentile"));

    py::class_<CalibrationStats>(m, "CalibrationStats")
        .def_readonly("medians", &CalibrationStats::medians)
        .def_readonly("mads", &CalibrationStats::mads)
        .def_readonly("threshold", &CalibrationStats::threshold)
        .def_readonly("percentile", &CalibrationStats::percentile)
        .def_readonly("m", &CalibrationStats::m)
        .def("anomaly_score", [](const CalibrationStats& s, const std::array<double, 4>& y) {
            return anomaly_score(to_score(y), s);
        })
        .def("is_abnormal", [](const CalibrationStats& s, const std::array<double, 4>& y) {
            return classify(anomaly_score(to_score(y), s), s) == Label::abnormal;
        })
        .def("to_json", &CalibrationStats::to_json);

    m.def("fit_calibration", [](const std::vector<std::array<double, 4>>& rows, double percentile) {
        std::vector<ScoreVector> cal;
        for (const auto& r : rows) cal.push_back(to_score(r));
        return fit_calibration(cal, percentile);
    }, py::arg("scores"), py::arg("percentile") = 95.0,
       "Scores are (point_max, point_mean, context_max, context_mean) rows.");

    m.def("synthesize", [](std::size_t n_normal, std::size_t n_abnormal, std::uint64_t seed) {
        SynthSpec spec;
        spec.n_normal_sequences = n_normal;
        spec.n_abnormal_sequences = n_abnormal;
        spec.seed = seed;
        py::list out;
        for (const auto& s : synth_sequences(generate_corpus(spec)))
            out.append(py::make_tuple(s.id, to_string(s.label), s.messages));
        return out;
    }, py::arg("n_normal"), py::arg("n_abnormal"), py::arg("seed") = 1,
       "List of (id, label, messages) tuples.");

    m.def("stage_names", [] {
        std::vector<std::string> names;
        for (const auto& [k, v] : stages()) names.push_back(k);
        return names;
    });

    m.def("run_stage", [](const std::string& name, const std::string& config_path,
                          const std::vector<std::string>& overrides) {
        const auto it = stages().find(name);
        if (it == stages().end()) throw ConfigInvalid("unknown stage '" + name + "'");
        const auto cfg = load_run_config(config_path, overrides);
        py::gil_scoped_release release;
        return it->second(cfg).dump();
    }, py::arg("name"), py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
       "Runs one stage and returns its JSON summary as text.");
}
