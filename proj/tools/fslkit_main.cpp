#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fslkit/errors.hpp"
#include "fslkit/gradcheck.hpp"
#include "fslkit/runner.hpp"

namespace {

int cmd_scan(const std::string& root, const std::string& out_manifest) {
  fsl::ScanResult result = fsl::scan_directory(root);
  result.manifest.save(out_manifest);
  std::printf("scanned %zu classes, %zu samples -> %s\n", result.manifest.classes.size(),
              result.manifest.total_samples(), out_manifest.c_str());
  if (result.skipped_files > 0) {
    std::printf("warning: skipped %zu non-image files\n", result.skipped_files);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials) {
  const auto cases = fsl::run_gradient_suite(seed, trials);
  std::fputs(fsl::format_report(cases).c_str(), stdout);
  if (!fsl::all_passed(cases)) {
    std::fprintf(stderr, "gradient check FAILED\n");
    return 4;
  }
  std::printf("all %zu gradient checks passed\n", cases.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episodic few-shot classification engine"};
  app.require_subcommand(1);

  std::string scan_root, scan_out;
  auto* scan = app.add_subcommand("scan", "Build a manifest from a class-per-folder tree");
  scan->add_option("root", scan_root, "dataset root directory")->required();
  scan->add_option("manifest", scan_out, "output manifest JSON path")->required();

  std::string config_path, checkpoint_path, resume_path;
  std::vector<std::string> overrides;
  std::uint64_t gc_seed = 0x5eedcafeULL;
  int gc_trials = 20;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--set", overrides, "override config keys, e.g. train.epochs=10");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic embedded dataset");
  add_config(synth);
  auto* train = app.add_subcommand("train", "Episodic meta-training");
  add_config(train);
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  auto* eval = app.add_subcommand("eval", "600-episode evaluation protocol");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  auto* compare = app.add_subcommand("compare", "Mahalanobis vs Euclidean head comparison");
  add_config(compare);
  compare->add_option("--checkpoint", checkpoint_path, "optional trained checkpoint");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck->add_option("--trials", gc_trials, "trials per primitive");

  CLI11_PARSE(app, argc, argv);

  try {
    if (scan->parsed()) return cmd_scan(scan_root, scan_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_trials);

    const fsl::RunConfig cfg = fsl::load_run_config(config_path, overrides);
    if (synth->parsed()) {
      const fsl::SynthOutputs out = fsl::run_synth(cfg);
      std::printf("synthetic dataset: %d classes x %d samples, dim %d\n", cfg.synth.classes,
                  cfg.synth.samples_per_class, cfg.synth.dim);
      std::printf("wrote %s, %s, %s\n", out.manifest_path.c_str(), out.embeddings_path.c_str(),
                  out.split_path.c_str());
    } else if (train->parsed()) {
      const fsl::TrainOutputs out = fsl::run_train(cfg, resume_path);
      std::printf("trained %d epochs; final mean loss %.4f, train acc %.4f\n", out.epochs,
                  out.final_mean_loss, out.final_train_accuracy);
      std::printf("wrote %s\n", out.checkpoint_path.c_str());
    } else if (eval->parsed()) {
      const fsl::EvalOutputs out = fsl::run_eval(cfg, checkpoint_path);
      std::printf("%d episodes: mean accuracy %.4f +/- %.4f\n", cfg.eval.n_episodes,
                  out.report.mean_accuracy, out.report.ci95_half_width);
      std::printf("wrote %s\n", out.report_json_path.c_str());
    } else if (compare->parsed()) {
      const fsl::CompareOutputs out = fsl::run_compare(cfg, checkpoint_path);
      std::fputs(fsl::comparison_table(out.comparison).c_str(), stdout);
      std::printf("wrote %s\n", out.json_path.c_str());
    }
  } catch (const fsl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fsl::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const fsl::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
