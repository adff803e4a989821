#include "fslkit/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"

namespace fsl {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (lr_step <= 0) throw ConfigError("lr_step must be > 0");
  if (lr_gamma <= 0.0 || lr_gamma > 1.0) throw ConfigError("lr_gamma must lie in (0, 1]");
  if (loss_lambda < 0.0) throw ConfigError("loss_lambda must be >= 0");
  if (episodes_per_epoch < 1) throw ConfigError("episodes_per_epoch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (n_way < 2) throw ConfigError("n_way must be >= 2");
  if (m_shot < 1) throw ConfigError("m_shot must be >= 1");
  if (queries_per_class < 1) throw ConfigError("queries_per_class must be >= 1 for training");
  if (beta <= 0.0) throw ConfigError("beta must be > 0");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (pretrain_batch < 1) throw ConfigError("pretrain_batch must be >= 1");
}

namespace {

template <typename Params, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> list_tensors(Params& p) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  if (p.backbone.kind == BackboneKind::conv_small) {
    for (std::size_t i = 0; i < p.conv.conv_w.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".w", &p.conv.conv_w[i]);
      out.emplace_back("conv" + std::to_string(i) + ".b", &p.conv.conv_b[i]);
    }
    out.emplace_back("proj.w", &p.conv.proj_w);
    out.emplace_back("proj.b", &p.conv.proj_b);
  }
  out.emplace_back("adapter.w_q", &p.adapter.w_q);
  out.emplace_back("adapter.w_k", &p.adapter.w_k);
  out.emplace_back("adapter.w_v", &p.adapter.w_v);
  if (p.adapter.has_bias) {
    out.emplace_back("adapter.b_q", &p.adapter.b_q);
    out.emplace_back("adapter.b_k", &p.adapter.b_k);
    out.emplace_back("adapter.b_v", &p.adapter.b_v);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  return list_tensors<ModelParams, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  return list_tensors<const ModelParams, const Tensor*>(*this);
}

ModelParams init_model(const BackboneConfig& backbone, std::uint64_t seed, bool adapter_bias) {
  backbone.validate();
  ModelParams p;
  p.backbone = backbone;
  if (backbone.kind == BackboneKind::conv_small) {
    p.conv = init_conv_backbone(backbone, mix_seed(seed, 1));
  }
  p.adapter = init_adapter(backbone.embed_dim, mix_seed(seed, 2), adapter_bias);
  return p;
}

ModelVars lift_model(ad::Tape& tape, const ModelParams& params) {
  ModelVars v;
  v.kind = params.backbone.kind;
  if (params.backbone.kind == BackboneKind::conv_small) {
    v.conv = lift_conv_backbone(tape, params.conv);
  }
  v.adapter = lift_adapter(tape, params.adapter);
  return v;
}

std::vector<std::pair<ad::Var, Tensor*>> trainable_bindings(const ModelVars& vars,
                                                            ModelParams& params) {
  std::vector<std::pair<ad::Var, Tensor*>> out;
  if (params.backbone.kind == BackboneKind::conv_small) {
    for (std::size_t i = 0; i < params.conv.conv_w.size(); ++i) {
      out.emplace_back(vars.conv.conv_w[i], &params.conv.conv_w[i]);
      out.emplace_back(vars.conv.conv_b[i], &params.conv.conv_b[i]);
    }
    out.emplace_back(vars.conv.proj_w, &params.conv.proj_w);
    out.emplace_back(vars.conv.proj_b, &params.conv.proj_b);
  }
  out.emplace_back(vars.adapter.w_q, &params.adapter.w_q);
  out.emplace_back(vars.adapter.w_k, &params.adapter.w_k);
  out.emplace_back(vars.adapter.w_v, &params.adapter.w_v);
  if (params.adapter.has_bias) {
    out.emplace_back(vars.adapter.b_q, &params.adapter.b_q);
    out.emplace_back(vars.adapter.b_k, &params.adapter.b_k);
    out.emplace_back(vars.adapter.b_v, &params.adapter.b_v);
  }
  return out;
}

EpisodeBatch featurize_episode(const Episode& episode, const DatasetManifest& manifest,
                               const BackboneConfig& backbone, const PreprocessSpec& prep) {
  EpisodeBatch batch;
  for (const auto& item : episode.support) batch.support_labels.push_back(item.label);
  for (const auto& item : episode.query) batch.query_labels.push_back(item.label);

  if (backbone.kind == BackboneKind::precomputed) {
    if (!manifest.embedded) {
      throw DataError("precomputed backbone needs an embedding store attached to the manifest");
    }
    auto lookup = [&](const std::vector<EpisodeItem>& items) {
      std::vector<std::string> ids;
      ids.reserve(items.size());
      for (const auto& it : items) ids.push_back(it.sample.id);
      return embed_ids(ids, *manifest.embedded).embeddings;
    };
    batch.support_inputs = lookup(episode.support);
    batch.query_inputs = lookup(episode.query);
  } else {
    batch.has_images = true;
    auto load = [&](const std::vector<EpisodeItem>& items) {
      std::vector<std::string> paths;
      paths.reserve(items.size());
      for (const auto& it : items) paths.push_back(it.sample.path);
      return load_and_preprocess(paths, prep);
    };
    batch.support_inputs = load(episode.support);
    batch.query_inputs = load(episode.query);
  }
  return batch;
}

namespace {

int infer_n_classes(const std::vector<int>& labels) {
  return 1 + *std::max_element(labels.begin(), labels.end());
}

// Per-class means of labeled rows, stacked into [N x d].
ad::Var class_means_vars(ad::Tape& tape, ad::Var rows, const std::vector<int>& labels,
                         int n_classes) {
  ad::Var mu;
  for (int n = 0; n < n_classes; ++n) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == n) idx.push_back(i);
    }
    if (idx.empty()) throw DataError("no rows for class " + std::to_string(n));
    ad::Var m = tape.mean_rows(tape.gather_rows(rows, idx));
    mu = n == 0 ? m : tape.concat_rows(mu, m);
  }
  return mu;
}

double accuracy_from_distances(const Tensor& distances, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < distances.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < distances.cols(); ++c) {
      if (distances.at(i, c) < distances.at(i, best)) best = c;
    }
    if (static_cast<int>(best) == labels[i]) hits++;
  }
  return distances.rows() ? static_cast<double>(hits) / distances.rows() : 0.0;
}

}  // namespace

ad::Var cross_entropy_from_distances(ad::Tape& tape, ad::Var distances,
                                     const std::vector<int>& labels) {
  const Tensor& d = tape.value(distances);
  if (d.rows() != labels.size()) {
    throw DimensionError("label count does not match distance rows");
  }
  ad::Var logp = tape.log_softmax_rows(tape.scale(distances, -1.0));
  Tensor onehot({d.rows(), d.cols()});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  ad::Var picked = tape.sum(tape.mul(logp, tape.constant(std::move(onehot))));
  return tape.scale(picked, -1.0 / static_cast<double>(d.rows()));
}

ad::Var episode_loss_vars(ad::Tape& tape, const EpisodeBatch& batch, const ModelVars& model,
                          const TrainConfig& cfg, LossBreakdown* detail) {
  if (!batch.support_inputs.all_finite() || !batch.query_inputs.all_finite()) {
    throw NumericError("episode inputs contain non-finite values");
  }
  const int n_classes = infer_n_classes(batch.support_labels);

  ad::Var sup_phi, que_phi;
  if (batch.has_images) {
    sup_phi = conv_forward(tape, tape.constant(batch.support_inputs), model.conv);
    que_phi = conv_forward(tape, tape.constant(batch.query_inputs), model.conv);
  } else {
    sup_phi = tape.constant(batch.support_inputs);
    que_phi = tape.constant(batch.query_inputs);
  }

  // Term 1: the deployed pipeline on the episode's queries.
  AdaptedSetVars adapted = adapt_vars(tape, sup_phi, que_phi, model.adapter);
  TaskStatsVars stats = estimate_statistics_vars(tape, adapted.support, batch.support_labels,
                                                 n_classes, cfg.beta, cfg.cov_mode);
  ad::Var query_dists = class_distances_vars(tape, adapted.queries, stats.mu, stats);
  ad::Var query_ce = cross_entropy_from_distances(tape, query_dists, batch.query_labels);

  ad::Var loss = query_ce;
  double contrastive_value = 0.0;

  // Term 2: transform the full episode jointly and pull every instance
  // toward its own class center.
  if (cfg.loss_lambda > 0.0) {
    std::vector<int> all_labels = batch.support_labels;
    all_labels.insert(all_labels.end(), batch.query_labels.begin(), batch.query_labels.end());

    ad::Var full = tape.concat_rows(sup_phi, que_phi);
    AdaptedSetVars transformed = adapt_vars(tape, full, ad::Var{}, model.adapter);
    ad::Var psi = transformed.support;  // the whole set, transformed

    std::vector<std::size_t> sup_idx(batch.support_labels.size());
    std::iota(sup_idx.begin(), sup_idx.end(), std::size_t{0});
    ad::Var psi_support = tape.gather_rows(psi, sup_idx);
    TaskStatsVars stats2 = estimate_statistics_vars(tape, psi_support, batch.support_labels,
                                                    n_classes, cfg.beta, cfg.cov_mode);
    ad::Var centers = cfg.contrastive_centers_include_queries
                          ? class_means_vars(tape, psi, all_labels, n_classes)
                          : stats2.mu;
    ad::Var dists2 = class_distances_vars(tape, psi, centers, stats2);
    ad::Var contrastive = cross_entropy_from_distances(tape, dists2, all_labels);
    contrastive_value = tape.value(contrastive).scalar_value();
    loss = tape.add(loss, tape.scale(contrastive, cfg.loss_lambda));
  }

  if (detail) {
    detail->total = tape.value(loss).scalar_value();
    detail->query_ce = tape.value(query_ce).scalar_value();
    detail->contrastive = contrastive_value;
    detail->query_accuracy = accuracy_from_distances(tape.value(query_dists), batch.query_labels);
  }
  return loss;
}

void NesterovSgd::step(double lr, const std::vector<std::pair<std::string, Tensor*>>& params,
                       const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p].second;
    auto [it, fresh] = velocity_.try_emplace(params[p].first, Tensor::zeros(theta.shape()));
    Tensor& v = it->second;
    if (!v.same_shape(theta)) {
      throw DimensionError("velocity shape differs for parameter " + params[p].first);
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[p][i] + weight_decay_ * theta[i];
      v[i] = momentum_ * v[i] - lr * g;
      theta[i] += momentum_ * v[i] - lr * g;
    }
  }
}

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

constexpr char kCkptMagic[4] = {'F', 'S', 'L', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint '" + path + "' for writing");
  os.write(kCkptMagic, 4);
  put_u32(os, kCkptVersion);
  put_u64(os, config_hash);
  put_u32(os, epoch);
  put_u64(os, global_step);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t e : t.shape()) put_u64(os, e);
    for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("write to checkpoint '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw DataError("'" + path + "' is not a checkpoint file");
  }
  if (get_u32(is) != kCkptVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_hash = get_u64(is);
  ckpt.epoch = get_u32(is);
  ckpt.global_step = get_u64(is);
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const std::uint32_t ndim = get_u32(is);
    std::vector<std::size_t> shape(ndim);
    for (auto& e : shape) e = get_u64(is);
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<double>(get_u64(is));
    if (!is) throw DataError("truncated checkpoint '" + path + "'");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ModelParams& params, const NesterovSgd& opt,
                           std::uint32_t epoch, std::uint64_t global_step,
                           std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.global_step = global_step;
  ckpt.config_hash = config_hash;
  for (const auto& [name, t] : params.named_tensors()) ckpt.tensors.emplace_back(name, *t);
  // Velocities in parameter order for a stable file layout.
  for (const auto& [name, t] : params.named_tensors()) {
    auto it = opt.velocities().find(name);
    ckpt.tensors.emplace_back("opt." + name,
                              it != opt.velocities().end() ? it->second
                                                           : Tensor::zeros(t->shape()));
  }
  return ckpt;
}

void restore_from_checkpoint(const Checkpoint& ckpt, ModelParams& params, NesterovSgd& opt) {
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : ckpt.tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  for (auto& [name, t] : params.named_tensors()) {
    const Tensor* stored = find(name);
    if (!stored) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (!stored->same_shape(*t)) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + stored->shape_string() +
                      ", model expects " + t->shape_string());
    }
    *t = *stored;
    const Tensor* vel = find("opt." + name);
    if (vel) opt.restore_velocity(name, *vel);
  }
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_gamma, epoch / cfg.lr_step);
}

std::string log_to_csv(const std::vector<EpochLogRow>& rows, const std::string& config_echo) {
  std::ostringstream os;
  if (!config_echo.empty()) os << "# config " << config_echo << "\n";
  os << "epoch,mean_loss,mean_train_acc,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.mean_loss,
                  r.mean_train_acc, r.lr);
    os << buf;
  }
  return os.str();
}

namespace {

// Supervised warm-up of the conv backbone over all meta_train classes with
// a throwaway linear head.
void pretrain_backbone(ModelParams& params, const DatasetManifest& manifest,
                       const PreprocessSpec& prep, const TrainConfig& cfg) {
  const auto pool = manifest.classes_in(Split::meta_train);
  std::vector<std::pair<std::string, int>> samples;  // path, class index
  for (std::size_t c = 0; c < pool.size(); ++c) {
    for (const auto& s : manifest.classes[pool[c]].samples) {
      samples.emplace_back(s.path, static_cast<int>(c));
    }
  }
  const std::size_t n_classes = pool.size();
  const std::size_t d = params.backbone.embed_dim;

  Rng rng(mix_seed(cfg.seed, 0x70726574));  // "pret"
  Tensor head_w({n_classes, d});
  const double std_w = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : head_w.data()) v = std_w * rng.gaussian();
  Tensor head_b({1, n_classes});

  NesterovSgd opt(cfg.momentum, cfg.weight_decay);
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    auto order = rng.choose(samples.size(), samples.size());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.pretrain_batch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.pretrain_batch));
      std::vector<std::string> paths;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        paths.push_back(samples[order[i]].first);
        labels.push_back(samples[order[i]].second);
      }
      ad::Tape tape;
      ConvBackboneVars conv = lift_conv_backbone(tape, params.conv);
      ad::Var hw = tape.leaf(head_w);
      ad::Var hb = tape.leaf(head_b);
      ad::Var emb = conv_forward(tape, tape.constant(load_and_preprocess(paths, prep)), conv);
      ad::Var logits = tape.add_rowvec(tape.matmul(emb, tape.transpose(hw)), hb);
      // Reuse the distance-based CE with negated logits as "distances".
      ad::Var loss = cross_entropy_from_distances(tape, tape.scale(logits, -1.0), labels);
      if (!std::isfinite(tape.value(loss).scalar_value())) {
        throw NumericError("pretraining loss is not finite at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);

      std::vector<std::pair<std::string, Tensor*>> names;
      std::vector<Tensor> grads;
      std::vector<std::pair<ad::Var, Tensor*>> binds;
      for (std::size_t i = 0; i < params.conv.conv_w.size(); ++i) {
        binds.emplace_back(conv.conv_w[i], &params.conv.conv_w[i]);
        binds.emplace_back(conv.conv_b[i], &params.conv.conv_b[i]);
      }
      binds.emplace_back(conv.proj_w, &params.conv.proj_w);
      binds.emplace_back(conv.proj_b, &params.conv.proj_b);
      binds.emplace_back(hw, &head_w);
      binds.emplace_back(hb, &head_b);
      int k = 0;
      for (auto& [var, tensor] : binds) {
        names.emplace_back("pre." + std::to_string(k++), tensor);
        grads.push_back(tape.grad(var));
      }
      opt.step(lr, names, grads);
    }
  }
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const PreprocessSpec& prep,
                  const BackboneConfig& backbone, const TrainConfig& cfg,
                  std::uint64_t config_hash, const Checkpoint* resume) {
  cfg.validate();
  backbone.validate();

  // Fail before any work if the split cannot host the episode shape.
  const auto pool = manifest.classes_in(Split::meta_train);
  if (pool.size() < static_cast<std::size_t>(cfg.n_way)) {
    throw DataError("meta_train split has " + std::to_string(pool.size()) +
                    " classes, training needs " + std::to_string(cfg.n_way));
  }
  const std::size_t need = static_cast<std::size_t>(cfg.m_shot) + cfg.queries_per_class;
  for (std::size_t idx : pool) {
    if (manifest.classes[idx].samples.size() < need) {
      throw DataError("class '" + manifest.classes[idx].name + "' has " +
                      std::to_string(manifest.classes[idx].samples.size()) +
                      " samples, training needs " + std::to_string(need));
    }
  }

  TrainResult result;
  result.params = init_model(backbone, cfg.seed, cfg.adapter_bias);
  NesterovSgd opt(cfg.momentum, cfg.weight_decay);

  std::uint32_t start_epoch = 0;
  std::uint64_t global_step = 0;
  if (resume) {
    restore_from_checkpoint(*resume, result.params, opt);
    start_epoch = resume->epoch;
    global_step = resume->global_step;
  } else if (cfg.pretrain_epochs > 0 && backbone.kind == BackboneKind::conv_small) {
    pretrain_backbone(result.params, manifest, prep, cfg);
  }

  for (int epoch = static_cast<int>(start_epoch); epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0, acc_sum = 0.0;
    for (int i = 0; i < cfg.episodes_per_epoch; ++i, ++global_step) {
      const std::uint64_t episode_seed = mix_seed(cfg.seed, global_step);
      const Episode episode = sample_episode(manifest, Split::meta_train, cfg.n_way,
                                             cfg.m_shot, cfg.queries_per_class, episode_seed);
      const EpisodeBatch batch = featurize_episode(episode, manifest, backbone, prep);

      ad::Tape tape;
      ModelVars model = lift_model(tape, result.params);
      LossBreakdown detail;
      ad::Var loss;
      try {
        loss = episode_loss_vars(tape, batch, model, cfg, &detail);
        if (!std::isfinite(detail.total)) throw NumericError("loss is not finite");
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", lr " + std::to_string(lr) + ", episode seed " +
                           std::to_string(episode_seed) + ")");
      }
      tape.backward(loss);

      auto binds = trainable_bindings(model, result.params);
      std::vector<std::pair<std::string, Tensor*>> names;
      std::vector<Tensor> grads;
      auto named = result.params.named_tensors();
      for (std::size_t p = 0; p < binds.size(); ++p) {
        names.emplace_back(named[p].first, binds[p].second);
        grads.push_back(tape.grad(binds[p].first));
      }
      opt.step(lr, names, grads);

      loss_sum += detail.total;
      acc_sum += detail.query_accuracy;
    }
    result.log.push_back(EpochLogRow{epoch, loss_sum / cfg.episodes_per_epoch,
                                     acc_sum / cfg.episodes_per_epoch, lr});
  }

  result.checkpoint = make_checkpoint(result.params, opt, static_cast<std::uint32_t>(cfg.epochs),
                                      global_step, config_hash);
  return result;
}

}  // namespace fsl
