#include <doctest.h>

#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"
#include "fslkit/trainer.hpp"
#include "test_support.hpp"

using namespace fsl;

namespace {

DatasetManifest synthetic_dataset(int classes = 6, int dim = 6, double mean_scale = 4.0,
                                  int samples = 16, std::uint64_t seed = 5) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.dim = dim;
  spec.mean_scale = mean_scale;
  spec.samples_per_class = samples;
  spec.seed = seed;
  DatasetManifest m = generate_synthetic(spec);
  m.apply_split(fraction_split(m, 0.5));
  return m;
}

BackboneConfig precomputed_backbone(int dim) {
  BackboneConfig cfg;
  cfg.kind = BackboneKind::precomputed;
  cfg.embed_dim = static_cast<std::size_t>(dim);
  return cfg;
}

TrainConfig small_train(int dim_ignored = 0) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 5;
  cfg.n_way = 2;
  cfg.m_shot = 2;
  cfg.queries_per_class = 3;
  cfg.seed = 17;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  const auto na = a.named_tensors();
  const auto nb = b.named_tensors();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first) return false;
    if (!na[i].second->same_shape(*nb[i].second)) return false;
    for (std::size_t k = 0; k < na[i].second->size(); ++k) {
      if ((*na[i].second)[k] != (*nb[i].second)[k]) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("nesterov update matches a hand-computed trajectory") {
  // L = theta^2 / 2, lr = 0.1, mu = 0.9: theta walks 1 -> 0.81 -> 0.5751
  // -> 0.327321.
  NesterovSgd opt(0.9, 0.0);
  Tensor theta = Tensor::scalar(1.0);
  std::vector<std::pair<std::string, Tensor*>> params{{"theta", &theta}};
  const double expected[] = {0.81, 0.5751, 0.327321};
  for (double want : expected) {
    const std::vector<Tensor> grads{Tensor::scalar(theta[0])};
    opt.step(0.1, params, grads);
    CHECK(theta[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("weight decay folds into the gradient") {
  NesterovSgd opt(0.0, 0.5);
  Tensor theta = Tensor::scalar(2.0);
  std::vector<std::pair<std::string, Tensor*>> params{{"theta", &theta}};
  opt.step(0.1, params, {Tensor::scalar(0.0)});
  // g = 0 + 0.5 * 2 = 1; v = -0.1; theta = 2 - 0.1 = 1.9 (mu = 0).
  CHECK(theta[0] == doctest::Approx(1.9).epsilon(1e-14));
}

TEST_CASE("learning rate schedule halves every lr_step epochs") {
  TrainConfig cfg;  // lr 2e-4, step 40, gamma 0.5
  for (int epoch : {0, 10, 39}) CHECK(lr_at_epoch(cfg, epoch) == 2e-4);
  for (int epoch : {40, 55, 79}) CHECK(lr_at_epoch(cfg, epoch) == 1e-4);
  CHECK(lr_at_epoch(cfg, 80) == 5e-5);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const DatasetManifest m = synthetic_dataset();
  const BackboneConfig bb = precomputed_backbone(6);
  TrainConfig cfg = small_train();
  cfg.learning_rate = 0.0;
  const TrainResult result = train(m, PreprocessSpec{}, bb, cfg);
  const ModelParams fresh = init_model(bb, cfg.seed, cfg.adapter_bias);
  CHECK(params_equal(result.params, fresh));
}

TEST_CASE("uniform predictions cost ln N") {
  for (int n : {2, 4, 7}) {
    ad::Tape tape;
    ad::Var distances = tape.constant(Tensor::full({3, static_cast<std::size_t>(n)}, 1.25));
    ad::Var ce = cross_entropy_from_distances(tape, distances, {0, 1, 0});
    CHECK(tape.value(ce).scalar_value() ==
          doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
  }
}

TEST_CASE("lambda zero reduces the loss to the query cross-entropy") {
  const DatasetManifest m = synthetic_dataset();
  const BackboneConfig bb = precomputed_backbone(6);
  TrainConfig cfg = small_train();
  const Episode ep = sample_episode(m, Split::meta_train, cfg.n_way, cfg.m_shot,
                                    cfg.queries_per_class, 321);
  const EpisodeBatch batch = featurize_episode(ep, m, bb, PreprocessSpec{});
  const ModelParams params = init_model(bb, 3, false);

  LossBreakdown with, without;
  {
    ad::Tape tape;
    ModelVars model = lift_model(tape, params);
    cfg.loss_lambda = 0.1;
    episode_loss_vars(tape, batch, model, cfg, &with);
  }
  {
    ad::Tape tape;
    ModelVars model = lift_model(tape, params);
    cfg.loss_lambda = 0.0;
    episode_loss_vars(tape, batch, model, cfg, &without);
  }
  CHECK(without.total == without.query_ce);
  CHECK(without.contrastive == 0.0);
  // Term 1 is unaffected by the weighting.
  CHECK(with.query_ce == without.query_ce);
  CHECK(with.total == doctest::Approx(with.query_ce + 0.1 * with.contrastive).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  testsup::TempDir tmp("ckpt");
  const BackboneConfig bb = precomputed_backbone(5);
  const ModelParams params = init_model(bb, 77, true);
  NesterovSgd opt(0.9, 5e-4);
  // Give the optimizer a velocity to serialize.
  ModelParams scratch = params;
  auto named = scratch.named_tensors();
  std::vector<Tensor> grads;
  for (auto& [name, t] : named) grads.push_back(Tensor::full(t->shape(), 0.25));
  opt.step(0.01, named, grads);

  const Checkpoint out = make_checkpoint(scratch, opt, 3, 123, 0xfeedULL);
  out.save(tmp.file("c.fslc"));
  const Checkpoint in = Checkpoint::load(tmp.file("c.fslc"));
  CHECK(in.epoch == 3);
  CHECK(in.global_step == 123);
  CHECK(in.config_hash == 0xfeedULL);
  REQUIRE(in.tensors.size() == out.tensors.size());
  for (std::size_t i = 0; i < in.tensors.size(); ++i) {
    CHECK(in.tensors[i].first == out.tensors[i].first);
    CHECK(in.tensors[i].second.shape() == out.tensors[i].second.shape());
    for (std::size_t k = 0; k < in.tensors[i].second.size(); ++k) {
      CHECK(in.tensors[i].second[k] == out.tensors[i].second[k]);
    }
  }
  // And the file itself is reproducible.
  in.save(tmp.file("c2.fslc"));
  CHECK(testsup::read_file(tmp.file("c.fslc")) == testsup::read_file(tmp.file("c2.fslc")));
}

TEST_CASE("restore rejects checkpoints that do not match the model") {
  const BackboneConfig bb = precomputed_backbone(5);
  ModelParams params = init_model(bb, 1, false);
  NesterovSgd opt(0.9, 0.0);
  Checkpoint empty;
  CHECK_THROWS_AS(restore_from_checkpoint(empty, params, opt), DataError);

  Checkpoint wrong = make_checkpoint(init_model(precomputed_backbone(4), 1, false), opt, 0, 0, 0);
  CHECK_THROWS_AS(restore_from_checkpoint(wrong, params, opt), DataError);
}

TEST_CASE("resuming from a checkpoint reproduces straight-through training") {
  const DatasetManifest m = synthetic_dataset();
  const BackboneConfig bb = precomputed_backbone(6);
  TrainConfig cfg = small_train();
  cfg.epochs = 4;
  cfg.learning_rate = 0.01;

  const TrainResult straight = train(m, PreprocessSpec{}, bb, cfg);

  TrainConfig first_half = cfg;
  first_half.epochs = 2;
  const TrainResult part1 = train(m, PreprocessSpec{}, bb, first_half);
  const TrainResult part2 = train(m, PreprocessSpec{}, bb, cfg, 0, &part1.checkpoint);

  CHECK(params_equal(straight.params, part2.params));
  REQUIRE(part2.log.size() == 2);  // epochs 2 and 3 only
  CHECK(part2.log[0].epoch == 2);
  CHECK(part2.log[0].mean_loss == straight.log[2].mean_loss);
  CHECK(part2.log[1].mean_loss == straight.log[3].mean_loss);
}

TEST_CASE("identical configs give identical loss logs") {
  const DatasetManifest m = synthetic_dataset();
  const BackboneConfig bb = precomputed_backbone(6);
  TrainConfig cfg = small_train();
  cfg.learning_rate = 0.01;
  const TrainResult a = train(m, PreprocessSpec{}, bb, cfg);
  const TrainResult b = train(m, PreprocessSpec{}, bb, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
    CHECK(a.log[i].mean_train_acc == b.log[i].mean_train_acc);
  }
  CHECK(log_to_csv(a.log, "x") == log_to_csv(b.log, "x"));
}

TEST_CASE("training on separable data halves the loss within 10 epochs") {
  const DatasetManifest m = synthetic_dataset(/*classes=*/10, /*dim=*/16, /*mean_scale=*/5.0,
                                              /*samples=*/40, /*seed=*/9);
  const BackboneConfig bb = precomputed_backbone(16);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.episodes_per_epoch = 30;
  cfg.n_way = 5;
  cfg.m_shot = 5;
  cfg.queries_per_class = 15;
  cfg.seed = 4;
  cfg.learning_rate = 0.01;
  cfg.lr_step = 100;
  const TrainResult result = train(m, PreprocessSpec{}, bb, cfg);
  REQUIRE(result.log.size() == 10);
  CHECK(result.log.back().mean_loss <= 0.5 * result.log.front().mean_loss);
  CHECK(result.log.back().mean_train_acc >= result.log.front().mean_train_acc);
}

TEST_CASE("non-finite data aborts with a diagnostic") {
  DatasetManifest m = synthetic_dataset(4, 4, 1.0, 8, 2);
  auto poisoned = std::make_shared<PrecomputedEmbeddingStore>(4);
  for (const auto& cls : m.classes)
    for (const auto& s : cls.samples) {
      poisoned->insert(s.id, {std::nan(""), 0.0, 0.0, 0.0});
    }
  m.embedded = poisoned;
  const BackboneConfig bb = precomputed_backbone(4);
  TrainConfig cfg = small_train();
  try {
    train(m, PreprocessSpec{}, bb, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("episode seed") != std::string::npos);
  }
}

TEST_CASE("training validates the split up front") {
  const DatasetManifest m = synthetic_dataset(4, 4, 1.0, 5, 2);
  const BackboneConfig bb = precomputed_backbone(4);
  TrainConfig cfg = small_train();
  cfg.queries_per_class = 10;  // needs 12 samples per class, only 5 exist
  CHECK_THROWS_AS(train(m, PreprocessSpec{}, bb, cfg), DataError);
}

TEST_CASE("conv path trains episodically and supports pretraining") {
  testsup::TempDir tmp("convtrain");
  // Tiny image dataset: 4 classes, distinct mean colors.
  DatasetManifest m;
  Rng rng(15);
  for (int c = 0; c < 4; ++c) {
    ClassEntry entry;
    entry.name = "c" + std::to_string(c);
    std::filesystem::create_directories(tmp.path() / entry.name);
    for (int s = 0; s < 4; ++s) {
      cv::Mat img(16, 16, CV_8UC3);
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const int base = 40 + 50 * c;
          img.at<cv::Vec3b>(y, x) =
              cv::Vec3b(static_cast<unsigned char>(base + rng.below(30)),
                        static_cast<unsigned char>(base + rng.below(30)),
                        static_cast<unsigned char>(base + rng.below(30)));
        }
      const std::string rel = entry.name + "/" + std::to_string(s) + ".png";
      cv::imwrite((tmp.path() / rel).string(), img);
      entry.samples.push_back(SampleRecord{rel, (tmp.path() / rel).string()});
    }
    m.classes.push_back(entry);
  }
  SplitAssignment split;
  split.meta_train = {"c0", "c1", "c2"};
  split.meta_test = {"c3"};
  m.apply_split(split);

  BackboneConfig bb;
  bb.kind = BackboneKind::conv_small;
  bb.embed_dim = 4;
  bb.input_size = 16;
  bb.channels_per_block = {4, 4};
  PreprocessSpec prep;
  prep.resize = 16;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 2;
  cfg.n_way = 2;
  cfg.m_shot = 1;
  cfg.queries_per_class = 2;
  cfg.pretrain_epochs = 1;
  cfg.pretrain_batch = 4;
  cfg.seed = 8;

  const TrainResult result = train(m, prep, bb, cfg);
  CHECK(result.log.size() == 1);
  CHECK(std::isfinite(result.log[0].mean_loss));
  // Pretraining + episodic steps moved the conv weights.
  const ModelParams fresh = init_model(bb, cfg.seed, false);
  CHECK(!params_equal(result.params, fresh));
}

TEST_SUITE_END();
