#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "fslkit/episodes.hpp"
#include "fslkit/errors.hpp"
#include "fslkit/image.hpp"
#include "fslkit/rng.hpp"
#include "test_support.hpp"

using namespace fsl;

namespace {

DatasetManifest small_manifest(int n_classes, int samples_each) {
  DatasetManifest m;
  for (int c = 0; c < n_classes; ++c) {
    ClassEntry entry;
    entry.name = "cls" + std::to_string(c);
    for (int s = 0; s < samples_each; ++s) {
      entry.samples.push_back(SampleRecord{entry.name + "/" + std::to_string(s), ""});
    }
    m.classes.push_back(entry);
  }
  SplitAssignment split;
  for (const auto& c : m.classes) split.meta_train.push_back(c.name);
  split.meta_test.push_back(split.meta_train.back());
  split.meta_train.pop_back();
  m.apply_split(split);
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("episodes");

TEST_CASE("manifest json round-trips") {
  testsup::TempDir tmp("manifest");
  DatasetManifest m;
  ClassEntry a{"alpha", {{"alpha/x.png", "/data/alpha/x.png"}, {"alpha/y.png", "/data/alpha/y.png"}}};
  ClassEntry b{"beta", {{"beta/z.png", "/data/beta/z.png"}}};
  m.classes = {a, b};
  m.save(tmp.file("m.json"));
  const DatasetManifest loaded = DatasetManifest::load(tmp.file("m.json"));
  REQUIRE(loaded.classes.size() == 2);
  CHECK(loaded.classes[0].name == "alpha");
  CHECK(loaded.classes[0].samples[1].id == "alpha/y.png");
  CHECK(loaded.classes[1].samples[0].path == "/data/beta/z.png");

  // Saving the loaded manifest reproduces the file byte for byte.
  loaded.save(tmp.file("m2.json"));
  CHECK(testsup::read_file(tmp.file("m.json")) == testsup::read_file(tmp.file("m2.json")));
}

TEST_CASE("split overlap is a hard error") {
  DatasetManifest m;
  m.classes = {ClassEntry{"a", {{"a/0", ""}}}, ClassEntry{"b", {{"b/0", ""}}}};
  SplitAssignment split;
  split.meta_train = {"a", "b"};
  split.meta_test = {"b"};
  CHECK_THROWS_AS(m.apply_split(split), DataError);
}

TEST_CASE("split must cover every class and name only known classes") {
  DatasetManifest m;
  m.classes = {ClassEntry{"a", {{"a/0", ""}}}, ClassEntry{"b", {{"b/0", ""}}}};
  SplitAssignment missing;
  missing.meta_train = {"a"};
  CHECK_THROWS_AS(m.apply_split(missing), DataError);
  SplitAssignment unknown;
  unknown.meta_train = {"a", "b"};
  unknown.meta_test = {"c"};
  CHECK_THROWS_AS(m.apply_split(unknown), DataError);
}

TEST_CASE("pigeonhole episode uses every sample exactly once") {
  DatasetManifest m = small_manifest(4, 5);  // meta_train: cls0..cls2
  const Episode ep = sample_episode(m, Split::meta_train, 3, 2, 3, 99);
  std::set<std::string> ids;
  for (const auto& item : ep.support) ids.insert(item.sample.id);
  for (const auto& item : ep.query) ids.insert(item.sample.id);
  CHECK(ids.size() == 15);  // 3 classes x 5 samples, no reuse
}

TEST_CASE("same seed gives identical episodes") {
  DatasetManifest m = small_manifest(6, 10);
  const Episode a = sample_episode(m, Split::meta_train, 3, 2, 4, 1234);
  const Episode b = sample_episode(m, Split::meta_train, 3, 2, 4, 1234);
  REQUIRE(a.support.size() == b.support.size());
  REQUIRE(a.query.size() == b.query.size());
  for (std::size_t i = 0; i < a.support.size(); ++i) {
    CHECK(a.support[i].sample.id == b.support[i].sample.id);
    CHECK(a.support[i].label == b.support[i].label);
  }
  for (std::size_t i = 0; i < a.query.size(); ++i) {
    CHECK(a.query[i].sample.id == b.query[i].sample.id);
  }
  const Episode c = sample_episode(m, Split::meta_train, 3, 2, 4, 1235);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.support.size() && !any_difference; ++i) {
    any_difference = a.support[i].sample.id != c.support[i].sample.id;
  }
  CHECK(any_difference);
}

TEST_CASE("class frequencies are uniform over many episodes") {
  DatasetManifest m = small_manifest(6, 4);  // 5 meta_train classes
  std::map<std::string, int> counts;
  const int episodes = 10000;
  for (int e = 0; e < episodes; ++e) {
    const Episode ep = sample_episode(m, Split::meta_train, 3, 1, 1, 5000 + e);
    for (const auto& name : ep.class_names) counts[name]++;
  }
  for (const auto& [name, count] : counts) {
    const double freq = static_cast<double>(count) / episodes;
    CHECK(freq == doctest::Approx(0.6).epsilon(0.034));  // 0.6 +/- 0.02
  }
}

TEST_CASE("insufficient data names the deficient class") {
  DatasetManifest m = small_manifest(4, 3);
  CHECK_THROWS_AS(sample_episode(m, Split::meta_train, 3, 2, 2, 1), DataError);
  try {
    sample_episode(m, Split::meta_train, 3, 2, 2, 1);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("cls") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_episode(m, Split::meta_test, 2, 1, 1, 1), DataError);  // 1 class only
}

TEST_CASE("support and query stay disjoint over fuzzed seeds") {
  DatasetManifest m = small_manifest(7, 12);
  for (int e = 0; e < 1000; ++e) {
    const Episode ep = sample_episode(m, Split::meta_train, 4, 3, 5, 777000 + e);
    validate_episode(ep);  // throws on any invariant violation
  }
}

TEST_CASE("all-remaining query mode consumes each chosen class") {
  DatasetManifest m = small_manifest(4, 9);
  const Episode ep = sample_episode(m, Split::meta_train, 2, 3, 0, 4242);
  CHECK(ep.query.size() == 2 * (9 - 3));
  validate_episode(ep);
}

TEST_CASE("synthetic class means have the requested norm") {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.dim = 8;
  spec.mean_scale = 5.0;
  spec.samples_per_class = 200;
  spec.seed = 31;
  const DatasetManifest m = generate_synthetic(spec);
  REQUIRE(m.embedded);
  for (const auto& cls : m.classes) {
    std::vector<double> mean(8, 0.0);
    for (const auto& s : cls.samples) {
      const auto& v = m.embedded->lookup(s.id);
      for (int j = 0; j < 8; ++j) mean[j] += v[j] / spec.samples_per_class;
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    CHECK(norm == doctest::Approx(5.0).epsilon(0.15));  // sample mean of 200 draws
  }
}

TEST_CASE("zero mean scale makes classes indistinguishable") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.dim = 4;
  spec.mean_scale = 0.0;
  spec.samples_per_class = 50;
  const DatasetManifest m = generate_synthetic(spec);
  for (const auto& cls : m.classes) {
    std::vector<double> mean(4, 0.0);
    for (const auto& s : cls.samples) {
      const auto& v = m.embedded->lookup(s.id);
      for (int j = 0; j < 4; ++j) mean[j] += v[j] / spec.samples_per_class;
    }
    for (double v : mean) CHECK(std::fabs(v) < 0.6);  // zero up to sampling noise
  }
}

TEST_CASE("anisotropic covariance shows the requested eigenvalue spread") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.dim = 8;
  spec.mean_scale = 0.0;
  spec.isotropic = false;
  spec.condition = 100.0;
  spec.samples_per_class = 500;
  spec.seed = 7;
  const DatasetManifest m = generate_synthetic(spec);

  // Empirical covariance of one class.
  const auto& cls = m.classes[0];
  const std::size_t d = 8, n = cls.samples.size();
  std::vector<double> mean(d, 0.0);
  for (const auto& s : cls.samples) {
    const auto& v = m.embedded->lookup(s.id);
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[j] / static_cast<double>(n);
  }
  Tensor cov({d, d});
  for (const auto& s : cls.samples) {
    const auto& v = m.embedded->lookup(s.id);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov.at(a, b) += (v[a] - mean[a]) * (v[b] - mean[b]) / static_cast<double>(n - 1);
  }
  auto eig = testsup::symmetric_eigenvalues(cov);
  std::sort(eig.begin(), eig.end());
  const double ratio = eig.back() / eig.front();
  CHECK(ratio >= 50.0);
  CHECK(ratio <= 200.0);  // within 2x of the requested 100
}

TEST_CASE("synthetic generation validates its inputs") {
  SyntheticSpec spec;
  spec.classes = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec.classes = 3;
  spec.samples_per_class = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec.samples_per_class = 5;
  spec.condition = 0.5;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("synthetic manifest round-trips through files") {
  testsup::TempDir tmp("synth");
  SyntheticSpec spec;
  spec.classes = 3;
  spec.dim = 4;
  spec.samples_per_class = 6;
  DatasetManifest m = generate_synthetic(spec);
  m.embedded->save(tmp.file("v.fsle"));
  m.embeddings_path = "v.fsle";
  m.save(tmp.file("m.json"));

  const DatasetManifest loaded = DatasetManifest::load(tmp.file("m.json"));
  REQUIRE(loaded.embedded);
  // f32 rounding at generation time makes the save/load loop lossless.
  for (const auto& cls : m.classes)
    for (const auto& s : cls.samples) {
      CHECK(loaded.embedded->lookup(s.id) == m.embedded->lookup(s.id));
    }
}

TEST_CASE("preprocess of an exact-size image is raw/255 normalized") {
  RgbImage img;
  img.width = 84;
  img.height = 84;
  img.pixels.resize(84 * 84 * 3);
  Rng rng(11);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));

  PreprocessSpec spec;  // defaults: 84, crop, mean 0.5, std 0.5
  const Tensor t = preprocess(img, spec);
  REQUIRE(t.shape() == std::vector<std::size_t>{3, 84, 84});
  for (int y = 0; y < 84; ++y)
    for (int x = 0; x < 84; ++x)
      for (int c = 0; c < 3; ++c) {
        const double expected = (img.at(y, x, c) / 255.0 - 0.5) / 0.5;
        CHECK(t[(static_cast<std::size_t>(c) * 84 + y) * 84 + x] ==
              doctest::Approx(expected).epsilon(1e-14));
      }
}

TEST_CASE("center crop takes the middle square") {
  // 100 rows x 200 columns; crop must keep columns 50..149.
  RgbImage img;
  img.width = 200;
  img.height = 100;
  img.pixels.assign(200 * 100 * 3, 0);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 200; ++x)
      img.pixels[(static_cast<std::size_t>(y) * 200 + x) * 3] = static_cast<std::uint8_t>(x);

  const RgbImage cropped = center_crop_square(img);
  CHECK(cropped.width == 100);
  CHECK(cropped.height == 100);
  CHECK(cropped.at(0, 0, 0) == 50);
  CHECK(cropped.at(99, 99, 0) == 149);
}

TEST_CASE("preprocess output extents are fixed by the config") {
  RgbImage img;
  img.width = 37;
  img.height = 123;
  img.pixels.assign(static_cast<std::size_t>(37) * 123 * 3, 7);
  PreprocessSpec spec;
  const Tensor t = preprocess(img, spec);
  CHECK(t.shape() == std::vector<std::size_t>{3, 84, 84});
}

TEST_CASE("decode rejects unreadable files and accepts png round-trips") {
  testsup::TempDir tmp("img");
  CHECK_THROWS_AS(decode_image(tmp.file("missing.png")), DataError);
  {
    std::ofstream os(tmp.file("junk.png"), std::ios::binary);
    os << "this is not a png";
  }
  CHECK_THROWS_AS(decode_image(tmp.file("junk.png")), DataError);

  cv::Mat bgr(10, 12, CV_8UC3);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(1, 2, 3);  // b,g,r
  cv::imwrite(tmp.file("ok.png"), bgr);
  const RgbImage img = decode_image(tmp.file("ok.png"));
  CHECK(img.width == 12);
  CHECK(img.height == 10);
  CHECK(img.at(0, 0, 0) == 3);  // red channel first after BGR -> RGB
  CHECK(img.at(0, 0, 2) == 1);
}

TEST_CASE("directory scan builds a sorted manifest and skips non-images") {
  testsup::TempDir tmp("scan");
  auto write_png = [&](const std::string& rel) {
    cv::Mat m(4, 4, CV_8UC3, cv::Scalar(9, 9, 9));
    std::filesystem::create_directories(tmp.path() / rel.substr(0, rel.find('/')));
    cv::imwrite((tmp.path() / rel).string(), m);
  };
  write_png("tulip/b.png");
  write_png("tulip/a.png");
  write_png("rose/z.png");
  {
    std::ofstream os(tmp.file("rose/readme.txt"));
    os << "not an image";
  }

  const ScanResult result = scan_directory(tmp.path().string());
  REQUIRE(result.manifest.classes.size() == 2);
  CHECK(result.manifest.classes[0].name == "rose");
  CHECK(result.manifest.classes[1].name == "tulip");
  CHECK(result.manifest.classes[1].samples[0].id == "tulip/a.png");
  CHECK(result.skipped_files == 1);

  // Rescanning the unchanged tree gives a byte-identical manifest.
  result.manifest.save(tmp.file("m1.json"));
  scan_directory(tmp.path().string()).manifest.save(tmp.file("m2.json"));
  CHECK(testsup::read_file(tmp.file("m1.json")) == testsup::read_file(tmp.file("m2.json")));
}

TEST_CASE("scan rejects class folders without images") {
  testsup::TempDir tmp("scan_empty");
  std::filesystem::create_directories(tmp.path() / "empty_class");
  try {
    scan_directory(tmp.path().string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("empty_class") != std::string::npos);
  }
}

TEST_SUITE_END();
