#include "fslkit/runner.hpp"

#include <filesystem>
#include <fstream>

#include "fslkit/errors.hpp"

namespace fs = std::filesystem;

namespace fsl {

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << content;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

DatasetManifest load_dataset(const RunConfig& cfg) {
  cfg.require_data();
  DatasetManifest manifest = DatasetManifest::load(cfg.manifest_path);
  manifest.apply_split(SplitAssignment::load(cfg.split_path));
  return manifest;
}

ModelParams model_from_checkpoint(const RunConfig& cfg, const std::string& ckpt_path) {
  ModelParams params = init_model(cfg.backbone, cfg.train.seed, cfg.train.adapter_bias);
  NesterovSgd opt(cfg.train.momentum, cfg.train.weight_decay);
  restore_from_checkpoint(Checkpoint::load(ckpt_path), params, opt);
  return params;
}

}  // namespace

SynthOutputs run_synth(const RunConfig& cfg) {
  DatasetManifest manifest = generate_synthetic(cfg.synth);
  SynthOutputs out;
  out.embeddings_path = out_path(cfg, "synthetic.fsle");
  manifest.embedded->save(out.embeddings_path);
  manifest.embeddings_path = "synthetic.fsle";
  out.manifest_path = out_path(cfg, "synthetic_manifest.json");
  manifest.save(out.manifest_path);
  out.split_path = out_path(cfg, "synthetic_split.json");
  fraction_split(manifest, cfg.synth_train_fraction).save(out.split_path);
  return out;
}

TrainOutputs run_train(const RunConfig& cfg, const std::string& resume_path) {
  DatasetManifest manifest = load_dataset(cfg);
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = Checkpoint::load(resume_path);
    if (resume.config_hash != cfg.hash()) {
      throw ConfigError("resume checkpoint was written with a different config");
    }
    resume_ptr = &resume;
  }
  TrainResult result =
      train(manifest, cfg.preprocess, cfg.backbone, cfg.train, cfg.hash(), resume_ptr);

  TrainOutputs out;
  out.checkpoint_path = out_path(cfg, "checkpoint.fslc");
  result.checkpoint.save(out.checkpoint_path);
  out.log_path = out_path(cfg, "train_log.csv");
  write_text(out.log_path, log_to_csv(result.log, cfg.echo));
  out.epochs = cfg.train.epochs;
  if (!result.log.empty()) {
    out.final_mean_loss = result.log.back().mean_loss;
    out.final_train_accuracy = result.log.back().mean_train_acc;
  }
  return out;
}

EvalOutputs run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  DatasetManifest manifest = load_dataset(cfg);
  ModelParams params = model_from_checkpoint(cfg, checkpoint_path);
  EvalOutputs out;
  out.report = evaluate(params, manifest, cfg.eval, cfg.preprocess);
  out.report_json_path = out_path(cfg, "eval_report.json");
  write_text(out.report_json_path, out.report.to_json(cfg.echo));
  out.report_csv_path = out_path(cfg, "eval_report.csv");
  write_text(out.report_csv_path, EvalReport::csv_header() + out.report.to_csv_row());
  return out;
}

CompareOutputs run_compare(const RunConfig& cfg, const std::string& checkpoint_path) {
  DatasetManifest manifest = load_dataset(cfg);
  ModelParams params = checkpoint_path.empty()
                           ? init_model(cfg.backbone, cfg.train.seed, cfg.train.adapter_bias)
                           : model_from_checkpoint(cfg, checkpoint_path);
  CompareOutputs out;
  out.comparison = compare_heads(params, manifest, cfg.eval, cfg.preprocess);
  out.json_path = out_path(cfg, "head_comparison.json");
  write_text(out.json_path, comparison_json(out.comparison, cfg.echo));
  return out;
}

}  // namespace fsl
