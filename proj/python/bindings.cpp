#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wise/checkpoint.hpp"
#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace py = pybind11;
using namespace wise;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() == 1) {
        Matrix m(1, static_cast<std::size_t>(a.shape(0)));
        std::copy(a.data(), a.data() + a.size(), m.data());
        return m;
    }
    if (a.ndim() != 2) throw ShapeError("expected a 1-D or 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data());
    return m;
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data(), m.data() + m.size(), out.mutable_data());
    return out;
}

std::vector<Matrix> to_matrices(const std::vector<Array>& arrays) {
    std::vector<Matrix> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) out.push_back(to_matrix(a));
    return out;
}

py::dict report_dict(const MetricsReport& r) {
    py::dict d;
    d["T"] = r.t_edits;
    d["rel"] = r.rel;
    d["gen"] = r.gen;
    d["loc"] = r.loc;
    d["avg"] = r.avg;
    d["ppl_loc"] = r.ppl_loc;
    d["label"] = r.label;
    return d;
}

// Python dicts cross the boundary as JSON text, so the strict C++ parser
// checks every key.
nlohmann::json to_json(const py::dict& d) {
    const auto dumps = py::module_::import("json").attr("dumps");
    return nlohmann::json::parse(dumps(d).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Side-memory knowledge editing on a tiny byte-level transformer";

    auto base = py::register_exception<Error>(m, "WiseError");
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<InputError>(m, "InputError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("d_ffn", &ModelConfig::d_ffn)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("edit_layer", &ModelConfig::edit_layer);

    py::class_<TinyTransformer>(m, "Model")
        .def_readonly("config", &TinyTransformer::config)
        .def_property_readonly("edit_values", [](const TinyTransformer& t) { return to_array(t.edit_values()); })
        .def("logits", [](const TinyTransformer& t, const std::string& text) {
            return to_array(forward(t, encode_bytes(text)).logits);
        })
        .def("edit_layer_activation", [](const TinyTransformer& t, const std::string& text) {
            return to_array(edit_layer_activation(t, encode_bytes(text)));
        })
        .def("complete", [](const TinyTransformer& t, const std::string& prompt, std::size_t n) {
            const Tokens p = encode_bytes(prompt);
            const Tokens out = greedy_decode(t, p, n);
            return decode_bytes(Tokens(out.begin() + static_cast<std::ptrdiff_t>(p.size()), out.end()));
        }, py::arg("prompt"), py::arg("n_tokens"));

    py::class_<SideMemory>(m, "SideMemory")
        .def_property_readonly("values", [](const SideMemory& s) { return to_array(s.values); })
        .def_readonly("epsilon", &SideMemory::epsilon)
        .def_readonly("edits_recorded", &SideMemory::edits_recorded)
        .def_property_readonly("masks", [](const SideMemory& s) {
            std::vector<Array> out;
            for (const auto& mask : s.masks) out.push_back(to_array(mask));
            return out;
        });

    m.def("init_model", &init_model, py::arg("config"), py::arg("seed") = 0);

    m.def("load_checkpoint", [](const std::string& path) {
        Checkpoint c = load_checkpoint(path);
        return py::make_tuple(std::move(c.model), std::move(c.memories));
    }, "Returns (model, side memories).");

    m.def("save_checkpoint", [](const TinyTransformer& model, const std::vector<SideMemory>& memories,
                                const std::string& path) {
        save_checkpoint(Checkpoint{model, memories, nlohmann::json::object()}, path);
    }, py::arg("model"), py::arg("memories"), py::arg("path"));

    m.def("complete_routed", [](const TinyTransformer& model, const std::vector<SideMemory>& memories,
                                const std::string& prompt, std::size_t n) {
        const Tokens p = encode_bytes(prompt);
        const Tokens out = greedy_decode(model, p, n, make_router(model, memories));
        return decode_bytes(Tokens(out.begin() + static_cast<std::ptrdiff_t>(p.size()), out.end()));
    }, py::arg("model"), py::arg("memories"), py::arg("prompt"), py::arg("n_tokens"),
       "Greedy completion that routes to a side memory when its activation clears the threshold.");

    m.def("routing_activation", [](const Array& main, const Array& side, const Array& rows, bool last_token) {
        return routing_activation(to_matrix(main), to_matrix(side), to_matrix(rows),
                                  last_token ? Aggregation::LastToken : Aggregation::Mean);
    }, py::arg("main"), py::arg("side"), py::arg("activations"), py::arg("last_token") = false);

    m.def("margin_loss", [](double d_edit, double d_irr, double alpha, double beta, double gamma) {
        EditConfig c;
        c.alpha = alpha;
        c.beta = beta;
        c.gamma = gamma;
        return margin_loss(d_edit, d_irr, c);
    }, py::arg("delta_edit"), py::arg("delta_irrelevant"), py::arg("alpha") = 5.0, py::arg("beta") = 20.0,
       py::arg("gamma") = 10.0);

    m.def("gen_masks", [](std::size_t rows, std::size_t cols, std::size_t k, double rho, std::uint64_t seed) {
        std::vector<Array> out;
        for (const auto& mask : gen_masks(rows, cols, k, rho, seed)) out.push_back(to_array(mask));
        return out;
    }, py::arg("rows"), py::arg("cols"), py::arg("k"), py::arg("rho"), py::arg("seed"));

    m.def("ties_merge", [](const std::vector<Array>& taus, double keep_ratio) {
        return to_array(ties_merge_vector(to_matrices(taus), keep_ratio));
    }, py::arg("task_vectors"), py::arg("keep_ratio") = 1.0);

    m.def("linear_merge", [](const std::vector<Array>& taus, std::vector<double> weights) {
        if (weights.empty()) weights.assign(taus.size(), 1.0 / static_cast<double>(taus.size()));
        return to_array(linear_merge_vector(to_matrices(taus), weights));
    }, py::arg("task_vectors"), py::arg("weights") = std::vector<double>{});

    m.def("gen_stream", [](std::uint64_t seed, std::size_t n) {
        DataConfig cfg;
        cfg.seed = seed;
        cfg.n_facts = n;
        py::list out;
        for (const auto& ex : gen_dataset(cfg).stream.examples) {
            py::dict d;
            d["prompt"] = decode_bytes(ex.prompt);
            d["target"] = decode_bytes(ex.target);
            d["paraphrase"] = ex.paraphrase ? py::cast(decode_bytes(*ex.paraphrase)) : py::none();
            d["locality"] = decode_bytes(ex.locality);
            out.append(d);
        }
        return out;
    }, py::arg("seed"), py::arg("n"));

    m.def("run_experiment", [](const py::dict& config) {
        const ExperimentConfig cfg = ExperimentConfig::from_json(to_json(config));
        ExperimentResult r;
        {
            py::gil_scoped_release release;
            r = run_experiment(cfg);
        }
        py::dict out;
        py::list reports, baseline;
        for (const auto& x : r.reports) reports.append(report_dict(x));
        for (const auto& x : r.baseline_reports) baseline.append(report_dict(x));
        out["reports"] = reports;
        out["baseline"] = baseline;
        out["memories"] = r.final_stream.memories;
        return out;
    }, py::arg("config"), "Runs pretraining (or loads the cached model), editing and evaluation.");
}
