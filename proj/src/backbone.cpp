#include "fslkit/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"

namespace fsl {

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

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

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

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

constexpr char kMagic[4] = {'F', 'S', 'L', 'E'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void BackboneConfig::validate() const {
  if (embed_dim < 2) throw ConfigError("backbone embed_dim must be >= 2");
  if (kind == BackboneKind::conv_small) {
    if (channels_per_block.empty()) {
      throw ConfigError("conv-small backbone needs at least one block");
    }
    if (input_size < (std::size_t{1} << n_blocks())) {
      throw ConfigError("input_size " + std::to_string(input_size) +
                        " too small for " + std::to_string(n_blocks()) + " pooling stages");
    }
  }
}

const std::vector<double>& PrecomputedEmbeddingStore::lookup(const std::string& id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end()) {
    throw DataError("embedding store has no vector for sample id '" + id + "'");
  }
  return it->second;
}

void PrecomputedEmbeddingStore::insert(const std::string& id, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) {
    throw DataError("embedding for '" + id + "' has length " + std::to_string(vec.size()) +
                    ", store dimension is " + std::to_string(dim_));
  }
  if (id.size() > 0xffff) throw DataError("sample id longer than 65535 bytes");
  auto [it, inserted] = vectors_.emplace(id, std::move(vec));
  if (!inserted) throw DataError("duplicate sample id '" + id + "' in embedding store");
  order_.push_back(id);
}

void PrecomputedEmbeddingStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(dim_));
  put_u64(os, order_.size());
  for (const auto& id : order_) {
    put_u16(os, static_cast<std::uint16_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (double v : vectors_.at(id)) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw DataError("write to '" + path + "' failed");
}

PrecomputedEmbeddingStore PrecomputedEmbeddingStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open embedding file '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("'" + path + "' is not an FSLE embedding file");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw DataError("unsupported FSLE version " + std::to_string(version));
  }
  const std::uint32_t dim = get_u32(is);
  const std::uint64_t count = get_u64(is);
  PrecomputedEmbeddingStore store(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint16_t len = get_u16(is);
    std::string id(len, '\0');
    is.read(id.data(), len);
    std::vector<double> vec(dim);
    for (std::uint32_t j = 0; j < dim; ++j) vec[j] = static_cast<double>(get_f32(is));
    if (!is) throw DataError("truncated FSLE file '" + path + "'");
    store.insert(id, std::move(vec));
  }
  return store;
}

ConvBackboneParams init_conv_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ConvBackboneParams p;
  std::size_t c_in = 3;
  for (std::size_t c_out : cfg.channels_per_block) {
    const double std_w = std::sqrt(2.0 / static_cast<double>(c_in * 9));
    Tensor w({c_out, c_in, 3, 3});
    for (double& v : w.data()) v = std_w * rng.gaussian();
    p.conv_w.push_back(std::move(w));
    p.conv_b.push_back(Tensor({c_out}));
    c_in = c_out;
  }
  const double std_p = std::sqrt(1.0 / static_cast<double>(c_in));
  p.proj_w = Tensor({cfg.embed_dim, c_in});
  for (double& v : p.proj_w.data()) v = std_p * rng.gaussian();
  p.proj_b = Tensor({1, cfg.embed_dim});
  return p;
}

ConvBackboneVars lift_conv_backbone(ad::Tape& tape, const ConvBackboneParams& params) {
  ConvBackboneVars vars;
  for (const Tensor& w : params.conv_w) vars.conv_w.push_back(tape.leaf(w));
  for (const Tensor& b : params.conv_b) vars.conv_b.push_back(tape.leaf(b));
  vars.proj_w = tape.leaf(params.proj_w);
  vars.proj_b = tape.leaf(params.proj_b);
  return vars;
}

ad::Var conv_forward(ad::Tape& tape, ad::Var images, const ConvBackboneVars& vars) {
  ad::Var x = images;
  for (std::size_t i = 0; i < vars.conv_w.size(); ++i) {
    x = tape.conv2d(x, vars.conv_w[i], vars.conv_b[i], /*pad=*/1);
    x = tape.relu(x);
    x = tape.maxpool2d(x, 2);
  }
  ad::Var pooled = tape.global_avg_pool(x);
  return tape.add_rowvec(tape.matmul(pooled, tape.transpose(vars.proj_w)), vars.proj_b);
}

Tensor conv_embed(const Tensor& images, const ConvBackboneParams& params) {
  ad::Tape tape;
  ConvBackboneVars vars = lift_conv_backbone(tape, params);
  ad::Var out = conv_forward(tape, tape.constant(images), vars);
  return tape.value(out);
}

EmbeddingBatch embed_ids(const std::vector<std::string>& ids,
                         const PrecomputedEmbeddingStore& store) {
  if (ids.empty()) throw DimensionError("embed_ids on an empty batch");
  Tensor m({ids.size(), store.dim()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& v = store.lookup(ids[i]);
    for (std::size_t j = 0; j < v.size(); ++j) m.at(i, j) = v[j];
  }
  return EmbeddingBatch{std::move(m), {}};
}

}  // namespace fsl
