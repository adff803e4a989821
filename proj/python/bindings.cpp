#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fslkit/adapter.hpp"
#include "fslkit/autodiff.hpp"
#include "fslkit/errors.hpp"
#include "fslkit/gradcheck.hpp"
#include "fslkit/linalg.hpp"
#include "fslkit/metric.hpp"
#include "fslkit/runner.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

fsl::Tensor to_tensor(const Array& a) {
  std::vector<std::size_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return fsl::Tensor(std::move(shape), std::move(data));
}

py::array_t<double> from_tensor(const fsl::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

fsl::TaskCovMode cov_mode(const std::string& name) {
  if (name == "within-class") return fsl::TaskCovMode::within_class;
  if (name == "task-mean") return fsl::TaskCovMode::task_mean;
  throw fsl::ConfigError("task_covariance must be 'within-class' or 'task-mean'");
}

fsl::HeadKind head_kind(const std::string& name) {
  if (name == "mahalanobis") return fsl::HeadKind::mahalanobis;
  if (name == "euclidean") return fsl::HeadKind::euclidean;
  throw fsl::ConfigError("head must be 'mahalanobis' or 'euclidean'");
}

fsl::RunConfig config_from_text(const std::string& json_text) {
  return fsl::parse_run_config(json_text, "config");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Episodic few-shot classification engine: set-to-set adaptation and "
            "class-covariance metric classification";

  py::register_exception<fsl::ConfigError>(m, "FslConfigError", PyExc_ValueError);
  py::register_exception<fsl::DataError>(m, "FslDataError", PyExc_ValueError);
  py::register_exception<fsl::NumericError>(m, "FslNumericError", PyExc_ArithmeticError);

  m.def(
      "softmax_rows",
      [](const Array& x) { return from_tensor(fsl::ad::softmax_rows_value(to_tensor(x))); },
      py::arg("x"), "Row-wise softmax with max-shift stabilization.");

  m.def(
      "cholesky_solve",
      [](const Array& a, const Array& b) {
        return from_tensor(fsl::cholesky_solve(to_tensor(a), to_tensor(b)));
      },
      py::arg("a"), py::arg("b"),
      "Solve A X = B for symmetric positive-definite A via Cholesky.");

  m.def(
      "adapt",
      [](const Array& support, const Array& queries, const Array& w_q, const Array& w_k,
         const Array& w_v) {
        fsl::AdapterParams params;
        params.w_q = to_tensor(w_q);
        params.w_k = to_tensor(w_k);
        params.w_v = to_tensor(w_v);
        fsl::EmbeddingBatch sup{to_tensor(support), {}};
        fsl::EmbeddingBatch que{to_tensor(queries), {}};
        fsl::AdaptedSet out = fsl::adapt(sup, que, params);
        return py::make_tuple(from_tensor(out.support.embeddings),
                              from_tensor(out.queries.embeddings),
                              from_tensor(out.attention));
      },
      py::arg("support"), py::arg("queries"), py::arg("w_q"), py::arg("w_k"), py::arg("w_v"),
      "Set-to-set adaptation: every row is enriched by attention over the "
      "support rows with a residual connection. Returns (support, queries, "
      "attention).");

  py::class_<fsl::TaskStatistics>(m, "TaskStatistics")
      .def_property_readonly("mu", [](const fsl::TaskStatistics& s) { return from_tensor(s.mu); })
      .def_property_readonly("sigma_task",
                             [](const fsl::TaskStatistics& s) { return from_tensor(s.sigma_task); })
      .def_property_readonly("sigma_class",
                             [](const fsl::TaskStatistics& s) {
                               py::list out;
                               for (const auto& t : s.sigma_class) out.append(from_tensor(t));
                               return out;
                             })
      .def_property_readonly("q_reg",
                             [](const fsl::TaskStatistics& s) {
                               py::list out;
                               for (const auto& t : s.q_reg) out.append(from_tensor(t));
                               return out;
                             })
      .def_readonly("lambda_blend", &fsl::TaskStatistics::lambda_blend)
      .def_readonly("beta", &fsl::TaskStatistics::beta)
      .def_property_readonly("n_classes", &fsl::TaskStatistics::n_classes);

  m.def(
      "estimate_statistics",
      [](const Array& embeddings, const std::vector<int>& labels, double beta,
         const std::string& task_covariance) {
        fsl::EmbeddingBatch support{to_tensor(embeddings), labels};
        return fsl::estimate_statistics(support, beta, cov_mode(task_covariance));
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("beta") = 1.0,
      py::arg("task_covariance") = "within-class",
      "Class means, covariances and the regularized blended matrices of a "
      "labeled support set.");

  m.def(
      "mahalanobis_sq",
      [](const Array& x, const Array& mu, const Array& q) {
        return fsl::mahalanobis_sq(to_tensor(x), to_tensor(mu), to_tensor(q));
      },
      py::arg("x"), py::arg("mu"), py::arg("q"),
      "0.5 (x - mu)^T Q^-1 (x - mu) through the factorization.");

  m.def(
      "classify",
      [](const Array& query, const fsl::TaskStatistics& stats, const std::string& head) {
        const fsl::Prediction pred = fsl::classify(to_tensor(query), stats, head_kind(head));
        py::dict out;
        out["probabilities"] = pred.probabilities;
        out["distances"] = pred.distances;
        out["argmax"] = pred.argmax;
        return out;
      },
      py::arg("query"), py::arg("stats"), py::arg("head") = "mahalanobis",
      "Softmax over negated distances against every class.");

  m.def(
      "gradient_suite",
      [](std::uint64_t seed, int trials) {
        py::list out;
        for (const auto& c : fsl::run_gradient_suite(seed, trials)) {
          py::dict d;
          d["name"] = c.name;
          d["max_rel_err"] = c.max_rel_err;
          d["tolerance"] = c.tolerance;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0x5eedcafeULL, py::arg("trials") = 20,
      "Finite-difference validation of every differentiable primitive.");

  m.def(
      "scan",
      [](const std::string& root, const std::string& out_manifest) {
        fsl::ScanResult result = fsl::scan_directory(root);
        result.manifest.save(out_manifest);
        py::dict out;
        out["classes"] = result.manifest.classes.size();
        out["samples"] = result.manifest.total_samples();
        out["skipped"] = result.skipped_files;
        return out;
      },
      py::arg("root"), py::arg("out_manifest"),
      "Build a manifest JSON from a class-per-folder directory tree.");

  m.def(
      "run_synth",
      [](const std::string& config_json) {
        const fsl::SynthOutputs out = fsl::run_synth(config_from_text(config_json));
        py::dict d;
        d["manifest"] = out.manifest_path;
        d["embeddings"] = out.embeddings_path;
        d["split"] = out.split_path;
        return d;
      },
      py::arg("config_json"));

  m.def(
      "run_train",
      [](const std::string& config_json, const std::string& resume) {
        const fsl::TrainOutputs out = fsl::run_train(config_from_text(config_json), resume);
        py::dict d;
        d["checkpoint"] = out.checkpoint_path;
        d["log"] = out.log_path;
        d["final_mean_loss"] = out.final_mean_loss;
        d["final_train_accuracy"] = out.final_train_accuracy;
        return d;
      },
      py::arg("config_json"), py::arg("resume") = "");

  m.def(
      "run_eval",
      [](const std::string& config_json, const std::string& checkpoint) {
        const fsl::EvalOutputs out = fsl::run_eval(config_from_text(config_json), checkpoint);
        py::dict d;
        d["report_json"] = out.report_json_path;
        d["report_csv"] = out.report_csv_path;
        d["mean_accuracy"] = out.report.mean_accuracy;
        d["ci95_half_width"] = out.report.ci95_half_width;
        return d;
      },
      py::arg("config_json"), py::arg("checkpoint"));

  m.def(
      "run_compare",
      [](const std::string& config_json, const std::string& checkpoint) {
        const fsl::CompareOutputs out =
            fsl::run_compare(config_from_text(config_json), checkpoint);
        py::dict d;
        d["json"] = out.json_path;
        d["mahalanobis_mean"] = out.comparison.mahalanobis.mean_accuracy;
        d["mahalanobis_ci95"] = out.comparison.mahalanobis.ci95_half_width;
        d["euclidean_mean"] = out.comparison.euclidean.mean_accuracy;
        d["euclidean_ci95"] = out.comparison.euclidean.ci95_half_width;
        return d;
      },
      py::arg("config_json"), py::arg("checkpoint") = "");
}
