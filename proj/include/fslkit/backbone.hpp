#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fslkit/autodiff.hpp"
#include "fslkit/tensor.hpp"

namespace fsl {

// A batch of d-dimensional embeddings, one per row, with row-aligned labels.
// Labels may be empty when the batch is unlabeled.
struct EmbeddingBatch {
  Tensor embeddings;        // [B x d]
  std::vector<int> labels;  // episode-local labels, or empty
};

enum class BackboneKind { conv_small, precomputed };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::conv_small;
  std::size_t embed_dim = 64;
  std::size_t input_size = 84;
  std::vector<std::size_t> channels_per_block{32, 32, 32, 32};

  std::size_t n_blocks() const { return channels_per_block.size(); }
  void validate() const;  // throws ConfigError
};

// Map from sample id to a d-vector, backed by the FSLE binary format:
// magic "FSLE", version u32, d u32, count u64, then per record a u16 id
// length, the UTF-8 id, and d little-endian f32 values (widened to f64 on
// load). Iteration order is insertion order, so rewriting is byte-stable.
class PrecomputedEmbeddingStore {
public:
  PrecomputedEmbeddingStore() = default;
  explicit PrecomputedEmbeddingStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  bool contains(const std::string& id) const { return vectors_.count(id) > 0; }
  const std::vector<double>& lookup(const std::string& id) const;  // DataError if absent
  void insert(const std::string& id, std::vector<double> vec);
  const std::vector<std::string>& ids() const { return order_; }

  void save(const std::string& path) const;
  static PrecomputedEmbeddingStore load(const std::string& path);

private:
  std::size_t dim_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// Trainable weights of the conv-small extractor: per block a 3x3 conv with
// bias, then global average pooling and one linear projection to d.
struct ConvBackboneParams {
  std::vector<Tensor> conv_w;  // [C_out, C_in, 3, 3] per block
  std::vector<Tensor> conv_b;  // [C_out] per block
  Tensor proj_w;               // [d, C_last]
  Tensor proj_b;               // [1, d]
};

ConvBackboneParams init_conv_backbone(const BackboneConfig& cfg, std::uint64_t seed);

// Tape-bound view of the conv weights for differentiable forward passes.
struct ConvBackboneVars {
  std::vector<ad::Var> conv_w, conv_b;
  ad::Var proj_w, proj_b;
};

ConvBackboneVars lift_conv_backbone(ad::Tape& tape, const ConvBackboneParams& params);

// [B,3,H,W] -> [B,d]. Differentiable w.r.t. both images and weights.
ad::Var conv_forward(ad::Tape& tape, ad::Var images, const ConvBackboneVars& vars);

// Value-level embedding paths.
Tensor conv_embed(const Tensor& images, const ConvBackboneParams& params);
EmbeddingBatch embed_ids(const std::vector<std::string>& ids,
                         const PrecomputedEmbeddingStore& store);

}  // namespace fsl
