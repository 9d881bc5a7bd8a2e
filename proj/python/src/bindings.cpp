#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bison/diagnostics.hpp"
#include "bison/experiment.hpp"
#include "bison/report.hpp"

namespace py = pybind11;
using namespace bison;

namespace {

AccuracyMatrix to_matrix(const std::vector<std::vector<double>>& rows, const std::vector<double>& upper) {
  AccuracyMatrix a(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != k + 1) throw std::invalid_argument("row " + std::to_string(k + 1) + " must have " +
                                                             std::to_string(k + 1) + " entries");
    a.set_row(k + 1, rows[k]);
  }
  if (!upper.empty()) a.set_upper_bounds(upper);
  return a;
}

ConfusionMatrix to_confusion(const std::vector<std::vector<std::uint64_t>>& counts) {
  ConfusionMatrix m(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c].size() != counts.size()) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t d = 0; d < counts.size(); ++d)
      if (counts[c][d]) m.add(static_cast<int>(c), static_cast<int>(d), counts[c][d]);
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_bison, m) {
  m.doc() = "Online class-incremental learning engine";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::object err = config_error;
      py::object inst = err(e.what());
      inst.attr("field") = e.field();
      PyErr_SetObject(config_error.ptr(), inst.ptr());
    } catch (const ReportError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("default_config", [] { return ExperimentConfig::defaults().to_json().dump(); });
  m.def("config_schema", [] { return config_schema().dump(); });
  m.def("validate_config", [](const std::string& text) {
    return ExperimentConfig::from_json(json::parse(text)).to_json().dump();
  });

  m.def(
      "run_experiment",
      [](const std::string& config, std::size_t jobs, std::uint64_t seed_offset) {
        auto cfg = ExperimentConfig::from_json(json::parse(config));
        RunReport report;
        {
          py::gil_scoped_release release;
          report = run_experiment(cfg, {jobs, seed_offset});
        }
        return report_to_json(report).dump();
      },
      py::arg("config"), py::arg("jobs") = 1, py::arg("seed_offset") = 0);

  m.def(
      "emit_report",
      [](const std::string& results, const std::filesystem::path& outdir) {
        std::vector<std::string> out;
        for (const auto& p : emit_report(report_from_json(json::parse(results)), outdir)) out.push_back(p.string());
        return out;
      },
      py::arg("results"), py::arg("outdir"));

  m.def(
      "metrics",
      [](const std::vector<std::vector<double>>& rows, const std::vector<double>& upper) {
        const auto a = to_matrix(rows, upper);
        const std::size_t k = rows.size();
        py::dict d;
        d["aa"] = average_accuracy(a, k);
        d["af"] = k >= 2 ? py::cast(average_forgetting(a, k)) : py::none();
        d["ai"] = upper.empty() ? py::none() : py::cast(average_intransigence(a, k));
        return d;
      },
      py::arg("rows"), py::arg("upper_bounds") = std::vector<double>{});

  m.def(
      "similarity",
      [](const std::vector<std::vector<std::uint64_t>>& counts, const std::vector<std::pair<int, int>>& pairs) {
        const auto cm = to_confusion(counts);
        const SimilarPairs sp(cm.num_classes(), pairs);
        const auto r = row_normalize(cm);
        std::vector<double> sc;
        std::vector<std::optional<double>> ps;
        for (int c = 0; c < static_cast<int>(cm.num_classes()); ++c) {
          sc.push_back(sc_at_1(r, sp, c));
          ps.push_back(p_sim(r, sp, c));
        }
        py::dict d;
        d["row_normalized"] = r;
        d["sc_at_1"] = sc;
        d["p_sim"] = ps;
        return d;
      },
      py::arg("counts"), py::arg("pairs"));

  m.def(
      "grad_check",
      [](std::uint64_t seed, std::size_t instances) {
        py::list out;
        for (const auto& r : grad_check_suite(seed, instances)) {
          py::dict d;
          d["loss"] = r.loss;
          d["instances"] = r.instances;
          d["max_rel_error"] = r.max_rel_error;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("instances") = 20);

  m.def(
      "gradient_flow",
      [](std::uint64_t seed, std::size_t instances) {
        const auto r = gradient_flow_suite(seed, instances);
        py::dict d;
        d["instances"] = r.instances;
        d["align_wstr_nonzero"] = r.align_wstr_nonzero;
        d["cebuf_wstr_nonzero"] = r.cebuf_wstr_nonzero;
        d["stream_wbuf_nonzero"] = r.stream_wbuf_nonzero;
        d["stream_swap_wbuf_diff"] = r.stream_swap_wbuf_diff;
        d["ok"] = r.ok();
        return d;
      },
      py::arg("seed") = 0, py::arg("instances") = 10);

  m.def(
      "reservoir_bench",
      [](std::uint64_t seed, std::size_t capacity, std::size_t stream, std::size_t trials, std::size_t sequences) {
        const auto r = reservoir_bench(seed, capacity, stream, trials, sequences);
        py::dict d;
        d["trials"] = r.trials;
        d["first_half_fraction"] = r.first_half_fraction;
        d["property_sequences"] = r.property_sequences;
        d["max_size_seen"] = r.max_size_seen;
        d["capacity_violations"] = r.capacity_violations;
        return d;
      },
      py::arg("seed") = 0, py::arg("capacity") = 100, py::arg("stream") = 10000, py::arg("trials") = 500,
      py::arg("property_sequences") = 100000);
}
