#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fslkit/backbone.hpp"

namespace fsl {

enum class Split { meta_train, meta_test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct SampleRecord {
  std::string id;    // globally unique
  std::string path;  // image path; empty for embedded synthetic samples
};

struct ClassEntry {
  std::string name;
  std::vector<SampleRecord> samples;
};

// Which class names belong to which split. The two lists must be disjoint
// and together cover every manifest class.
struct SplitAssignment {
  std::vector<std::string> meta_train;
  std::vector<std::string> meta_test;

  static SplitAssignment load(const std::string& path);
  void save(const std::string& path) const;
};

struct DatasetManifest {
  std::vector<ClassEntry> classes;
  std::string embeddings_path;  // optional FSLE sidecar, relative to the manifest
  std::shared_ptr<const PrecomputedEmbeddingStore> embedded;  // null until attached

  bool has_split = false;
  std::vector<Split> split_tag;  // aligned with classes

  int find_class(const std::string& name) const;  // -1 when absent
  void apply_split(const SplitAssignment& split);
  std::vector<std::size_t> classes_in(Split s) const;
  std::size_t total_samples() const;

  // JSON form:  {"classes": [{"name": ..., "samples": [{"id":..., "path":...}]}]}
  // plus an optional "embeddings" key. Loading attaches the FSLE store when
  // the key is present.
  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;
};

struct EpisodeItem {
  SampleRecord sample;
  int label = 0;  // episode-local, 0..N-1
};

// One M-shot N-way task.
struct Episode {
  int n_way = 0;
  int m_shot = 0;
  int queries_per_class = 0;  // 0 means "all remaining" was requested
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;  // index = local label
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
};

// Draws N classes and M + Qc distinct samples per class from the split,
// fully determined by (manifest, parameters, seed). queries_per_class <= 0
// takes every remaining sample of each chosen class.
Episode sample_episode(const DatasetManifest& manifest, Split split, int n_way, int m_shot,
                       int queries_per_class, std::uint64_t seed);

// Checks every Episode invariant; throws on violation. Used by tests and
// after sampling.
void validate_episode(const Episode& episode);

struct SyntheticSpec {
  int classes = 10;
  int dim = 16;
  double mean_scale = 5.0;
  bool isotropic = true;
  double condition = 1.0;  // eigenvalue ratio of the shared covariance
  int samples_per_class = 50;
  std::uint64_t seed = 0;
};

// Gaussian class clusters with seeded means of norm mean_scale and a shared
// (optionally anisotropic) covariance. Vectors are embedded in an attached
// store, rounded through f32 so saving to FSLE is lossless.
DatasetManifest generate_synthetic(const SyntheticSpec& spec);

// Deterministic split of a manifest's classes: the first
// ceil(train_fraction * K) go to meta_train, the rest to meta_test.
SplitAssignment fraction_split(const DatasetManifest& manifest, double train_fraction);

struct ScanResult {
  DatasetManifest manifest;
  std::size_t skipped_files = 0;  // non-image files ignored during the scan
};

// Builds a manifest from a class-per-folder directory tree. Classes and
// files are sorted by name, so rescanning an unchanged tree is
// byte-identical.
ScanResult scan_directory(const std::string& root);

}  // namespace fsl
