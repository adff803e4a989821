#include "fslkit/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fsl {

std::string split_name(Split s) { return s == Split::meta_train ? "meta_train" : "meta_test"; }

Split split_from_name(const std::string& name) {
  if (name == "meta_train") return Split::meta_train;
  if (name == "meta_test") return Split::meta_test;
  throw ConfigError("unknown split '" + name + "'");
}

SplitAssignment SplitAssignment::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open split file '" + path + "'");
  ordered_json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError("split file '" + path + "' is not valid JSON: " + e.what());
  }
  SplitAssignment split;
  for (const auto& [key, value] : j.items()) {
    if (key != "meta_train" && key != "meta_test") {
      throw DataError("split file has unknown key '" + key + "'");
    }
    auto& target = key == "meta_train" ? split.meta_train : split.meta_test;
    for (const auto& name : value) target.push_back(name.get<std::string>());
  }
  return split;
}

void SplitAssignment::save(const std::string& path) const {
  ordered_json j;
  j["meta_train"] = meta_train;
  j["meta_test"] = meta_test;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write split file '" + path + "'");
  os << j.dump(2) << "\n";
}

int DatasetManifest::find_class(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void DatasetManifest::apply_split(const SplitAssignment& split) {
  split_tag.assign(classes.size(), Split::meta_train);
  std::vector<bool> assigned(classes.size(), false);
  auto tag = [&](const std::vector<std::string>& names, Split s) {
    for (const auto& name : names) {
      const int idx = find_class(name);
      if (idx < 0) throw DataError("split names unknown class '" + name + "'");
      if (assigned[idx]) {
        throw DataError("class '" + name + "' appears in both splits; "
                        "meta_train and meta_test must be disjoint");
      }
      assigned[idx] = true;
      split_tag[idx] = s;
    }
  };
  tag(split.meta_train, Split::meta_train);
  tag(split.meta_test, Split::meta_test);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!assigned[i]) {
      throw DataError("class '" + classes[i].name + "' is missing from the split file");
    }
  }
  has_split = true;
}

std::vector<std::size_t> DatasetManifest::classes_in(Split s) const {
  if (!has_split) throw DataError("manifest has no split assignment");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (split_tag[i] == s) out.push_back(i);
  }
  return out;
}

std::size_t DatasetManifest::total_samples() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.samples.size();
  return n;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path + "'");
  ordered_json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("classes") || !j["classes"].is_array()) {
    throw DataError("manifest '" + path + "' has no classes array");
  }
  DatasetManifest m;
  std::unordered_set<std::string> names, ids;
  for (const auto& jc : j["classes"]) {
    ClassEntry entry;
    entry.name = jc.at("name").get<std::string>();
    if (!names.insert(entry.name).second) {
      throw DataError("duplicate class name '" + entry.name + "' in manifest");
    }
    for (const auto& js : jc.at("samples")) {
      SampleRecord rec;
      rec.id = js.at("id").get<std::string>();
      if (js.contains("path")) rec.path = js["path"].get<std::string>();
      if (!ids.insert(rec.id).second) {
        throw DataError("duplicate sample id '" + rec.id + "' in manifest");
      }
      entry.samples.push_back(std::move(rec));
    }
    m.classes.push_back(std::move(entry));
  }
  if (j.contains("embeddings")) {
    m.embeddings_path = j["embeddings"].get<std::string>();
    const fs::path resolved = fs::path(path).parent_path() / m.embeddings_path;
    m.embedded = std::make_shared<PrecomputedEmbeddingStore>(
        PrecomputedEmbeddingStore::load(resolved.string()));
  }
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  ordered_json j;
  j["classes"] = ordered_json::array();
  for (const auto& c : classes) {
    ordered_json jc;
    jc["name"] = c.name;
    jc["samples"] = ordered_json::array();
    for (const auto& s : c.samples) {
      ordered_json js;
      js["id"] = s.id;
      if (!s.path.empty()) js["path"] = s.path;
      jc["samples"].push_back(std::move(js));
    }
    j["classes"].push_back(std::move(jc));
  }
  if (!embeddings_path.empty()) j["embeddings"] = embeddings_path;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest '" + path + "'");
  os << j.dump(2) << "\n";
}

Episode sample_episode(const DatasetManifest& manifest, Split split, int n_way, int m_shot,
                       int queries_per_class, std::uint64_t seed) {
  if (n_way < 2) throw ConfigError("n_way must be >= 2");
  if (m_shot < 1) throw ConfigError("m_shot must be >= 1");
  const auto pool = manifest.classes_in(split);
  if (pool.size() < static_cast<std::size_t>(n_way)) {
    throw DataError("split " + split_name(split) + " has " + std::to_string(pool.size()) +
                    " classes, episode needs " + std::to_string(n_way));
  }

  Rng rng(seed);
  const auto picked = rng.choose(pool.size(), static_cast<std::size_t>(n_way));

  Episode ep;
  ep.n_way = n_way;
  ep.m_shot = m_shot;
  ep.queries_per_class = std::max(queries_per_class, 0);
  ep.seed = seed;
  for (int label = 0; label < n_way; ++label) {
    const ClassEntry& cls = manifest.classes[pool[picked[label]]];
    const std::size_t available = cls.samples.size();
    const std::size_t want_queries = queries_per_class > 0
                                         ? static_cast<std::size_t>(queries_per_class)
                                         : available - std::min<std::size_t>(available, m_shot);
    const std::size_t need = static_cast<std::size_t>(m_shot) + std::max<std::size_t>(want_queries, 1);
    if (available < need) {
      throw DataError("class '" + cls.name + "' has " + std::to_string(available) +
                      " samples, episode needs " + std::to_string(need));
    }
    ep.class_names.push_back(cls.name);
    const auto chosen = rng.choose(available, static_cast<std::size_t>(m_shot) + want_queries);
    for (int i = 0; i < m_shot; ++i) {
      ep.support.push_back(EpisodeItem{cls.samples[chosen[i]], label});
    }
    for (std::size_t i = m_shot; i < chosen.size(); ++i) {
      ep.query.push_back(EpisodeItem{cls.samples[chosen[i]], label});
    }
  }
  validate_episode(ep);
  return ep;
}

void validate_episode(const Episode& ep) {
  if (static_cast<int>(ep.class_names.size()) != ep.n_way) {
    throw DataError("episode does not have n_way distinct classes");
  }
  std::set<std::string> distinct(ep.class_names.begin(), ep.class_names.end());
  if (static_cast<int>(distinct.size()) != ep.n_way) {
    throw DataError("episode class names are not distinct");
  }
  std::vector<int> sup_count(ep.n_way, 0), que_count(ep.n_way, 0);
  std::unordered_set<std::string> sup_ids, que_ids;
  for (const auto& item : ep.support) {
    if (item.label < 0 || item.label >= ep.n_way) throw DataError("support label out of range");
    sup_count[item.label]++;
    if (!sup_ids.insert(item.sample.id).second) throw DataError("duplicate support sample");
  }
  for (const auto& item : ep.query) {
    if (item.label < 0 || item.label >= ep.n_way) throw DataError("query label out of range");
    que_count[item.label]++;
    if (!que_ids.insert(item.sample.id).second) throw DataError("duplicate query sample");
    if (sup_ids.count(item.sample.id)) {
      throw DataError("sample '" + item.sample.id + "' is in both support and query");
    }
  }
  for (int n = 0; n < ep.n_way; ++n) {
    if (sup_count[n] != ep.m_shot) throw DataError("support count differs from m_shot");
    if (que_count[n] < 1) throw DataError("class has no query samples");
    if (ep.queries_per_class > 0 && que_count[n] != ep.queries_per_class) {
      throw DataError("query count differs from queries_per_class");
    }
  }
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.samples_per_class < 2) throw ConfigError("samples_per_class must be >= 2");
  if (spec.dim < 2) throw ConfigError("synthetic dim must be >= 2");
  if (spec.condition < 1.0) throw ConfigError("covariance condition number must be >= 1");

  const std::size_t d = static_cast<std::size_t>(spec.dim);
  Rng rng(spec.seed);

  // Shared covariance square root: U diag(sqrt(eigenvalues)) U^T with a
  // random orthogonal U and eigenvalues spread geometrically from 1 to the
  // requested condition number.
  Tensor cov_half = Tensor::identity(d);
  if (!spec.isotropic && spec.condition > 1.0) {
    Tensor basis({d, d});
    for (double& v : basis.data()) v = rng.gaussian();
    // Gram-Schmidt columns.
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += basis.at(r, c) * basis.at(r, p);
        for (std::size_t r = 0; r < d; ++r) basis.at(r, c) -= dot * basis.at(r, p);
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < d; ++r) norm += basis.at(r, c) * basis.at(r, c);
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < d; ++r) basis.at(r, c) /= norm;
    }
    Tensor sqrt_eig({d, d});
    for (std::size_t i = 0; i < d; ++i) {
      const double t = d > 1 ? static_cast<double>(i) / static_cast<double>(d - 1) : 0.0;
      sqrt_eig.at(i, i) = std::sqrt(std::pow(spec.condition, t));
    }
    cov_half = matmul(matmul(basis, sqrt_eig), transpose(basis));
  }

  auto store = std::make_shared<PrecomputedEmbeddingStore>(d);
  DatasetManifest manifest;
  for (int c = 0; c < spec.classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03d", c);
    ClassEntry entry;
    entry.name = name;

    std::vector<double> mean(d, 0.0);
    if (spec.mean_scale != 0.0) {
      double norm = 0.0;
      for (double& v : mean) {
        v = rng.gaussian();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : mean) v *= spec.mean_scale / norm;
    }

    for (int s = 0; s < spec.samples_per_class; ++s) {
      std::vector<double> z(d);
      for (double& v : z) v = rng.gaussian();
      std::vector<double> x(d);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = mean[i];
        for (std::size_t j = 0; j < d; ++j) acc += cov_half.at(i, j) * z[j];
        x[i] = static_cast<double>(static_cast<float>(acc));  // f32 grid, FSLE-lossless
      }
      char sid[48];
      std::snprintf(sid, sizeof(sid), "%s/%04d", name, s);
      store->insert(sid, std::move(x));
      entry.samples.push_back(SampleRecord{sid, ""});
    }
    manifest.classes.push_back(std::move(entry));
  }
  manifest.embedded = store;
  return manifest;
}

SplitAssignment fraction_split(const DatasetManifest& manifest, double train_fraction) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  }
  const std::size_t k = manifest.classes.size();
  const auto n_train = static_cast<std::size_t>(
      std::ceil(train_fraction * static_cast<double>(k)));
  if (n_train == 0 || n_train >= k) {
    throw ConfigError("train_fraction leaves one side of the split empty");
  }
  SplitAssignment split;
  for (std::size_t i = 0; i < k; ++i) {
    (i < n_train ? split.meta_train : split.meta_test).push_back(manifest.classes[i].name);
  }
  return split;
}

ScanResult scan_directory(const std::string& root) {
  if (!fs::is_directory(root)) throw DataError("'" + root + "' is not a directory");
  const std::set<std::string> image_ext{".png", ".jpg", ".jpeg"};

  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("'" + root + "' contains no class folders");

  ScanResult result;
  for (const auto& cls : class_dirs) {
    ClassEntry entry;
    entry.name = cls;
    std::vector<std::string> files;
    for (const auto& f : fs::directory_iterator(fs::path(root) / cls)) {
      if (!f.is_regular_file()) continue;
      std::string ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char ch) { return std::tolower(ch); });
      if (image_ext.count(ext)) {
        files.push_back(f.path().filename().string());
      } else {
        result.skipped_files++;
      }
    }
    if (files.empty()) {
      throw DataError("class folder '" + (fs::path(root) / cls).string() +
                      "' contains no images");
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      entry.samples.push_back(
          SampleRecord{cls + "/" + f, (fs::path(root) / cls / f).string()});
    }
    result.manifest.classes.push_back(std::move(entry));
  }
  return result;
}

}  // namespace fsl
