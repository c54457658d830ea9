#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "disp/attacks.hpp"
#include "disp/experiment.hpp"
#include "disp/infotheory.hpp"
#include "disp/regularizer.hpp"
#include "disp/tensor.hpp"

namespace py = pybind11;

namespace {

disp::Tensor rows_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw disp::NumericError("expected a 2-D array of feature rows");
  std::vector<double> values(a.data(), a.data() + a.size());
  return disp::Tensor::from_values(
      {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
      std::move(values));
}

disp::BatchLabels make_labels(const std::vector<int>& targets, const std::vector<int>& privates) {
  return disp::BatchLabels{targets, privates};
}

}  // namespace

PYBIND11_MODULE(_dispcore, m) {
  m.doc() = "Core operations of the DisP laboratory";

  py::register_exception<disp::ConfigError>(m, "ConfigError");
  py::register_exception<disp::DataError>(m, "DataError");
  py::register_exception<disp::NumericError>(m, "NumericError");

  // Closed-form analysis.
  m.def("conditional_entropy_p_given_t", &disp::conditional_entropy_p_given_t, py::arg("rho"));
  m.def("mi_pt", &disp::mutual_info_pt, py::arg("rho"));
  m.def(
      "mi_pz",
      [](double rho, double b) { return disp::mutual_info_pz({rho, b}); },
      py::arg("rho"), py::arg("b"));
  m.def(
      "printed_marginal_gap",
      [](double rho, double b) { return disp::printed_marginal_pz_gap({rho, b}); },
      py::arg("rho"), py::arg("b"));
  m.def(
      "estimate_b",
      [](py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> counts,
         double rho) {
        if (counts.size() != 1000)
          throw disp::NumericError("counts must hold 10x10x10 entries");
        disp::EmpiricalCounts c;
        std::copy_n(counts.data(), 1000, c.table.begin());
        return disp::estimate_b(c, rho);
      },
      py::arg("counts"), py::arg("rho"));

  // Regularizer values on plain arrays.
  m.def(
      "r_batch",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> v_hat,
         const std::vector<int>& targets, const std::vector<int>& privates,
         std::size_t num_targets) {
        return disp::r_batch(rows_tensor(v_hat), make_labels(targets, privates), num_targets)
            .item();
      },
      py::arg("v_hat"), py::arg("targets"), py::arg("privates"), py::arg("num_targets") = 10);
  m.def(
      "r_mem",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> v_hat,
         const std::vector<int>& targets, const std::vector<int>& privates,
         py::array_t<double, py::array::c_style | py::array::forcecast> bank_values,
         double beta) {
        if (bank_values.ndim() != 3)
          throw disp::NumericError("bank must be a [C, P, width] array");
        auto c = static_cast<std::size_t>(bank_values.shape(0));
        auto p = static_cast<std::size_t>(bank_values.shape(1));
        auto w = static_cast<std::size_t>(bank_values.shape(2));
        disp::MemoryBank bank(c, p, w, beta);
        std::vector<double> values(bank_values.data(), bank_values.data() + bank_values.size());
        std::vector<std::uint8_t> mask(c * p, 1);
        bank.restore(std::move(values), std::move(mask), 1);
        return disp::r_mem(rows_tensor(v_hat), make_labels(targets, privates), bank).item();
      },
      py::arg("v_hat"), py::arg("targets"), py::arg("privates"), py::arg("bank"),
      py::arg("beta") = 0.1);
  m.def(
      "l2_normalize",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> rows) {
        disp::Tensor out = disp::l2_normalize(rows_tensor(rows));
        py::array_t<double> result({out.dim(0), out.dim(1)});
        std::copy(out.values().begin(), out.values().end(), result.mutable_data());
        return result;
      },
      py::arg("rows"));

  // Experiment commands; configs are JSON text, results JSON file paths.
  m.def(
      "config_hash",
      [](const std::string& config) {
        return disp::ExperimentConfig::from_json_text(config).hash();
      },
      py::arg("config"));
  m.def(
      "build_dataset",
      [](const std::string& config, const std::string& out) {
        return disp::cmd_dataset(disp::ExperimentConfig::from_json_text(config), out).string();
      },
      py::arg("config"), py::arg("out"));
  m.def(
      "train",
      [](const std::string& config, const std::string& out) {
        auto summary =
            disp::cmd_train(disp::ExperimentConfig::from_json_text(config), out, false, 0);
        return summary.experiment_dir + "/summary.json";
      },
      py::arg("config"), py::arg("out"),
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "attack",
      [](const std::string& config, const std::string& features, const std::string& out_dir) {
        disp::cmd_attack(disp::ExperimentConfig::from_json_text(config), features, out_dir);
        return out_dir + "/leakage_report.json";
      },
      py::arg("config"), py::arg("features"), py::arg("out_dir"),
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "analyze",
      [](const std::string& config, const std::string& out) {
        auto cfg = disp::ExperimentConfig::from_json_text(config);
        disp::cmd_analyze(cfg, out);
        return out + "/" + cfg.hash() + "/analysis";
      },
      py::arg("config"), py::arg("out"));
}
