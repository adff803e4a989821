#include "fslkit/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fslkit/errors.hpp"

using ordered_json = nlohmann::ordered_json;

namespace fsl {

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw ConfigError("config field '" + path + "': " + why);
}

double as_number(const ordered_json& j, const std::string& path) {
  if (!j.is_number()) bad_field(path, "expected a number");
  return j.get<double>();
}

int as_int(const ordered_json& j, const std::string& path) {
  if (!j.is_number_integer()) bad_field(path, "expected an integer");
  return j.get<int>();
}

std::uint64_t as_u64(const ordered_json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) bad_field(path, "expected an integer");
  if (j.is_number_integer() && j.get<long long>() < 0) bad_field(path, "must be >= 0");
  return j.get<std::uint64_t>();
}

bool as_bool(const ordered_json& j, const std::string& path) {
  if (!j.is_boolean()) bad_field(path, "expected true or false");
  return j.get<bool>();
}

std::string as_string(const ordered_json& j, const std::string& path) {
  if (!j.is_string()) bad_field(path, "expected a string");
  return j.get<std::string>();
}

void reject_unknown(const ordered_json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) +
                        "'");
    }
  }
}

void parse_backbone(const ordered_json& j, BackboneConfig& cfg) {
  reject_unknown(j, "backbone", {"kind", "embed_dim", "input_size", "channels_per_block"});
  if (j.contains("kind")) {
    const std::string kind = as_string(j["kind"], "backbone.kind");
    if (kind == "conv-small") {
      cfg.kind = BackboneKind::conv_small;
    } else if (kind == "precomputed") {
      cfg.kind = BackboneKind::precomputed;
    } else {
      bad_field("backbone.kind", "must be 'conv-small' or 'precomputed'");
    }
  }
  if (j.contains("embed_dim")) {
    cfg.embed_dim = static_cast<std::size_t>(as_int(j["embed_dim"], "backbone.embed_dim"));
  }
  if (j.contains("input_size")) {
    cfg.input_size = static_cast<std::size_t>(as_int(j["input_size"], "backbone.input_size"));
  }
  if (j.contains("channels_per_block")) {
    if (!j["channels_per_block"].is_array()) {
      bad_field("backbone.channels_per_block", "expected an array");
    }
    cfg.channels_per_block.clear();
    for (const auto& e : j["channels_per_block"]) {
      cfg.channels_per_block.push_back(
          static_cast<std::size_t>(as_int(e, "backbone.channels_per_block[]")));
    }
  }
}

void parse_preprocess(const ordered_json& j, PreprocessSpec& spec) {
  reject_unknown(j, "preprocess", {"resize", "center_crop", "mean", "std"});
  if (j.contains("resize")) spec.resize = as_int(j["resize"], "preprocess.resize");
  if (j.contains("center_crop")) {
    spec.center_crop = as_bool(j["center_crop"], "preprocess.center_crop");
  }
  auto triple = [&](const char* key, std::array<double, 3>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array() || j[key].size() != 3) {
      bad_field(std::string("preprocess.") + key, "expected an array of 3 numbers");
    }
    for (int c = 0; c < 3; ++c) out[c] = as_number(j[key][c], std::string("preprocess.") + key);
  };
  triple("mean", spec.mean);
  triple("std", spec.stdev);
}

void parse_metric(const ordered_json& j, double& beta, TaskCovMode& mode) {
  reject_unknown(j, "metric", {"beta", "task_covariance"});
  if (j.contains("beta")) beta = as_number(j["beta"], "metric.beta");
  if (j.contains("task_covariance")) {
    const std::string m = as_string(j["task_covariance"], "metric.task_covariance");
    if (m == "within-class") {
      mode = TaskCovMode::within_class;
    } else if (m == "task-mean") {
      mode = TaskCovMode::task_mean;
    } else {
      bad_field("metric.task_covariance", "must be 'within-class' or 'task-mean'");
    }
  }
}

void parse_train(const ordered_json& j, TrainConfig& cfg) {
  reject_unknown(j, "train",
                 {"learning_rate", "weight_decay", "momentum", "lr_step", "lr_gamma",
                  "loss_lambda", "episodes_per_epoch", "epochs", "n_way", "m_shot",
                  "queries_per_class", "seed", "contrastive_centers_include_queries",
                  "adapter_bias", "pretrain_epochs", "pretrain_batch"});
  if (j.contains("learning_rate")) cfg.learning_rate = as_number(j["learning_rate"], "train.learning_rate");
  if (j.contains("weight_decay")) cfg.weight_decay = as_number(j["weight_decay"], "train.weight_decay");
  if (j.contains("momentum")) cfg.momentum = as_number(j["momentum"], "train.momentum");
  if (j.contains("lr_step")) cfg.lr_step = as_int(j["lr_step"], "train.lr_step");
  if (j.contains("lr_gamma")) cfg.lr_gamma = as_number(j["lr_gamma"], "train.lr_gamma");
  if (j.contains("loss_lambda")) cfg.loss_lambda = as_number(j["loss_lambda"], "train.loss_lambda");
  if (j.contains("episodes_per_epoch")) cfg.episodes_per_epoch = as_int(j["episodes_per_epoch"], "train.episodes_per_epoch");
  if (j.contains("epochs")) cfg.epochs = as_int(j["epochs"], "train.epochs");
  if (j.contains("n_way")) cfg.n_way = as_int(j["n_way"], "train.n_way");
  if (j.contains("m_shot")) cfg.m_shot = as_int(j["m_shot"], "train.m_shot");
  if (j.contains("queries_per_class")) cfg.queries_per_class = as_int(j["queries_per_class"], "train.queries_per_class");
  if (j.contains("seed")) cfg.seed = as_u64(j["seed"], "train.seed");
  if (j.contains("contrastive_centers_include_queries")) {
    cfg.contrastive_centers_include_queries =
        as_bool(j["contrastive_centers_include_queries"], "train.contrastive_centers_include_queries");
  }
  if (j.contains("adapter_bias")) cfg.adapter_bias = as_bool(j["adapter_bias"], "train.adapter_bias");
  if (j.contains("pretrain_epochs")) cfg.pretrain_epochs = as_int(j["pretrain_epochs"], "train.pretrain_epochs");
  if (j.contains("pretrain_batch")) cfg.pretrain_batch = as_int(j["pretrain_batch"], "train.pretrain_batch");
}

void parse_eval(const ordered_json& j, EvalConfig& cfg) {
  reject_unknown(j, "eval",
                 {"n_way", "m_shot", "queries_per_class", "episodes", "seed", "head", "split"});
  if (j.contains("n_way")) cfg.n_way = as_int(j["n_way"], "eval.n_way");
  if (j.contains("m_shot")) cfg.m_shot = as_int(j["m_shot"], "eval.m_shot");
  if (j.contains("queries_per_class")) cfg.queries_per_class = as_int(j["queries_per_class"], "eval.queries_per_class");
  if (j.contains("episodes")) cfg.n_episodes = as_int(j["episodes"], "eval.episodes");
  if (j.contains("seed")) cfg.seed = as_u64(j["seed"], "eval.seed");
  if (j.contains("head")) {
    const std::string head = as_string(j["head"], "eval.head");
    if (head == "mahalanobis") {
      cfg.head = HeadKind::mahalanobis;
    } else if (head == "euclidean") {
      cfg.head = HeadKind::euclidean;
    } else {
      bad_field("eval.head", "must be 'mahalanobis' or 'euclidean'");
    }
  }
  if (j.contains("split")) cfg.split = split_from_name(as_string(j["split"], "eval.split"));
}

void parse_synth(const ordered_json& j, SyntheticSpec& spec, double& train_fraction) {
  reject_unknown(j, "synth",
                 {"classes", "dim", "mean_scale", "covariance", "condition",
                  "samples_per_class", "seed", "train_fraction"});
  if (j.contains("classes")) spec.classes = as_int(j["classes"], "synth.classes");
  if (j.contains("dim")) spec.dim = as_int(j["dim"], "synth.dim");
  if (j.contains("mean_scale")) spec.mean_scale = as_number(j["mean_scale"], "synth.mean_scale");
  if (j.contains("covariance")) {
    const std::string cov = as_string(j["covariance"], "synth.covariance");
    if (cov == "isotropic") {
      spec.isotropic = true;
    } else if (cov == "anisotropic") {
      spec.isotropic = false;
    } else {
      bad_field("synth.covariance", "must be 'isotropic' or 'anisotropic'");
    }
  }
  if (j.contains("condition")) spec.condition = as_number(j["condition"], "synth.condition");
  if (j.contains("samples_per_class")) spec.samples_per_class = as_int(j["samples_per_class"], "synth.samples_per_class");
  if (j.contains("seed")) spec.seed = as_u64(j["seed"], "synth.seed");
  if (j.contains("train_fraction")) train_fraction = as_number(j["train_fraction"], "synth.train_fraction");
}

ordered_json canonical_echo(const RunConfig& cfg) {
  ordered_json j;
  j["backbone"]["kind"] =
      cfg.backbone.kind == BackboneKind::conv_small ? "conv-small" : "precomputed";
  j["backbone"]["embed_dim"] = cfg.backbone.embed_dim;
  j["backbone"]["input_size"] = cfg.backbone.input_size;
  j["backbone"]["channels_per_block"] = cfg.backbone.channels_per_block;
  j["preprocess"]["resize"] = cfg.preprocess.resize;
  j["preprocess"]["center_crop"] = cfg.preprocess.center_crop;
  j["preprocess"]["mean"] = cfg.preprocess.mean;
  j["preprocess"]["std"] = cfg.preprocess.stdev;
  j["metric"]["beta"] = cfg.train.beta;
  j["metric"]["task_covariance"] =
      cfg.train.cov_mode == TaskCovMode::within_class ? "within-class" : "task-mean";
  auto& t = j["train"];
  t["learning_rate"] = cfg.train.learning_rate;
  t["weight_decay"] = cfg.train.weight_decay;
  t["momentum"] = cfg.train.momentum;
  t["lr_step"] = cfg.train.lr_step;
  t["lr_gamma"] = cfg.train.lr_gamma;
  t["loss_lambda"] = cfg.train.loss_lambda;
  t["episodes_per_epoch"] = cfg.train.episodes_per_epoch;
  t["epochs"] = cfg.train.epochs;
  t["n_way"] = cfg.train.n_way;
  t["m_shot"] = cfg.train.m_shot;
  t["queries_per_class"] = cfg.train.queries_per_class;
  t["seed"] = cfg.train.seed;
  t["contrastive_centers_include_queries"] = cfg.train.contrastive_centers_include_queries;
  t["adapter_bias"] = cfg.train.adapter_bias;
  t["pretrain_epochs"] = cfg.train.pretrain_epochs;
  t["pretrain_batch"] = cfg.train.pretrain_batch;
  auto& e = j["eval"];
  e["n_way"] = cfg.eval.n_way;
  e["m_shot"] = cfg.eval.m_shot;
  e["queries_per_class"] = cfg.eval.queries_per_class;
  e["episodes"] = cfg.eval.n_episodes;
  e["seed"] = cfg.eval.seed;
  e["head"] = cfg.eval.head == HeadKind::mahalanobis ? "mahalanobis" : "euclidean";
  e["split"] = split_name(cfg.eval.split);
  auto& s = j["synth"];
  s["classes"] = cfg.synth.classes;
  s["dim"] = cfg.synth.dim;
  s["mean_scale"] = cfg.synth.mean_scale;
  s["covariance"] = cfg.synth.isotropic ? "isotropic" : "anisotropic";
  s["condition"] = cfg.synth.condition;
  s["samples_per_class"] = cfg.synth.samples_per_class;
  s["seed"] = cfg.synth.seed;
  s["train_fraction"] = cfg.synth_train_fraction;
  j["data"]["manifest"] = cfg.manifest_path;
  j["data"]["split"] = cfg.split_path;
  j["out"]["dir"] = cfg.out_dir;
  return j;
}

RunConfig from_document(ordered_json doc, const std::string& source_name) {
  reject_unknown(doc, "",
                 {"backbone", "preprocess", "metric", "train", "eval", "synth", "data", "out"});
  RunConfig cfg;
  if (doc.contains("backbone")) parse_backbone(doc["backbone"], cfg.backbone);
  if (doc.contains("preprocess")) parse_preprocess(doc["preprocess"], cfg.preprocess);
  double beta = cfg.train.beta;
  TaskCovMode mode = cfg.train.cov_mode;
  if (doc.contains("metric")) parse_metric(doc["metric"], beta, mode);
  if (doc.contains("train")) parse_train(doc["train"], cfg.train);
  if (doc.contains("eval")) parse_eval(doc["eval"], cfg.eval);
  if (doc.contains("synth")) parse_synth(doc["synth"], cfg.synth, cfg.synth_train_fraction);
  if (doc.contains("data")) {
    reject_unknown(doc["data"], "data", {"manifest", "split"});
    if (doc["data"].contains("manifest")) {
      cfg.manifest_path = as_string(doc["data"]["manifest"], "data.manifest");
    }
    if (doc["data"].contains("split")) {
      cfg.split_path = as_string(doc["data"]["split"], "data.split");
    }
  }
  if (doc.contains("out")) {
    reject_unknown(doc["out"], "out", {"dir"});
    if (doc["out"].contains("dir")) cfg.out_dir = as_string(doc["out"]["dir"], "out.dir");
  }
  cfg.train.beta = beta;
  cfg.train.cov_mode = mode;
  cfg.eval.beta = beta;
  cfg.eval.cov_mode = mode;

  // Validate everything up front so commands never start work on a bad
  // configuration.
  try {
    cfg.backbone.validate();
    cfg.preprocess.validate();
    cfg.train.validate();
    cfg.eval.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source_name + ": " + e.what());
  }

  cfg.echo = canonical_echo(cfg).dump();
  return cfg;
}

void apply_override(ordered_json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got '" + spec + "'");
  }
  const std::string key = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  ordered_json parsed = ordered_json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare strings need no quotes

  ordered_json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("--set key '" + key + "' has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : echo) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void RunConfig::require_data() const {
  if (manifest_path.empty()) throw ConfigError("missing config field 'data.manifest'");
  if (split_path.empty()) throw ConfigError("missing config field 'data.split'");
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  ordered_json doc;
  try {
    is >> doc;
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_document(std::move(doc), path);
}

RunConfig parse_run_config(const std::string& json_text, const std::string& source_name) {
  ordered_json doc = ordered_json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(source_name + " is not valid JSON");
  return from_document(std::move(doc), source_name);
}

}  // namespace fsl
