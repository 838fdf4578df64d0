#pragma once

// Model hyperparameters, the weight set, deterministic synthetic weights, and
// the FVW1 binary weight format.
//
// FVW1 layout (little-endian):
//   "FVW1"  u32 version=1  u32 tensor_count
//   per tensor: u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 data[prod(dims)]
// Tensor order: embedding, then for each layer l (0-based in names)
//   layers.l.ln1.g, ln1.b, wq, wk, wv, wo, ln2.g, ln2.b, w1, w2,
// then ln_f.g, ln_f.b, out_proj.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastv/errors.hpp"
#include "fastv/numkernel.hpp"

namespace fastv {

struct ModelConfig {
  std::size_t layers = 1;   // T
  std::size_t d_model = 1;  // d
  std::size_t n_heads = 1;  // h
  std::size_t d_ff = 1;     // m
  std::size_t vocab = 1;
  std::size_t max_seq = 1;

  std::size_t head_dim() const noexcept { return d_model / n_heads; }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("model config: " + what);
    };
    require(layers >= 1, "layers must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(vocab >= 1, "vocab must be >= 1");
    require(max_seq >= 1, "max_seq must be >= 1");
    require(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) +
                                        ") not divisible by n_heads (" +
                                        std::to_string(n_heads) + ")");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers}, {"d_model", c.d_model}, {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},     {"vocab", c.vocab},     {"max_seq", c.max_seq}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    j.at("layers").get_to(c.layers);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_ff").get_to(c.d_ff);
    j.at("vocab").get_to(c.vocab);
    j.at("max_seq").get_to(c.max_seq);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = j.get<ModelConfig>();
  cfg.validate();
  return cfg;
}

struct LayerWeights {
  std::vector<float> ln1_g, ln1_b;
  DenseMatrix wq, wk, wv, wo;  // d x d
  std::vector<float> ln2_g, ln2_b;
  DenseMatrix w1;  // d x m
  DenseMatrix w2;  // m x d
};

struct WeightSet {
  DenseMatrix embedding;  // vocab x d
  std::vector<LayerWeights> layers;
  std::vector<float> lnf_g, lnf_b;
  DenseMatrix out_proj;  // d x vocab
};

namespace detail {

inline bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
}

}  // namespace detail

inline bool bitwise_equal(const WeightSet& a, const WeightSet& b) {
  using detail::bitwise_equal;
  auto mat = [](const DenseMatrix& x, const DenseMatrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && bitwise_equal(x.data(), y.data());
  };
  if (!mat(a.embedding, b.embedding) || !mat(a.out_proj, b.out_proj)) return false;
  if (!bitwise_equal(a.lnf_g, b.lnf_g) || !bitwise_equal(a.lnf_b, b.lnf_b)) return false;
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (!bitwise_equal(x.ln1_g, y.ln1_g) || !bitwise_equal(x.ln1_b, y.ln1_b) ||
        !bitwise_equal(x.ln2_g, y.ln2_g) || !bitwise_equal(x.ln2_b, y.ln2_b) ||
        !mat(x.wq, y.wq) || !mat(x.wk, y.wk) || !mat(x.wv, y.wv) || !mat(x.wo, y.wo) ||
        !mat(x.w1, y.w1) || !mat(x.w2, y.w2))
      return false;
  }
  return true;
}

// Synthetic weights come from std::mt19937_64 (its output sequence is fixed by
// the C++ standard). Each draw x maps to u = (x >> 40) * 2^-24 in [0, 1) and
// then to -0.08 + 0.16 * u evaluated in double and rounded to float. Matrices
// take uniform values in [-0.08, 0.08). Layer-norm gains are 1 + that value
// and biases are the value itself. Tensors are filled in file order.
inline constexpr double kWeightRange = 0.08;

class WeightStream {
 public:
  explicit WeightStream(std::uint64_t seed) : rng_(seed) {}
  float next() {
    const double u = static_cast<double>(rng_() >> 40) * 0x1.0p-24;
    return static_cast<float>(-kWeightRange + 2.0 * kWeightRange * u);
  }
  DenseMatrix matrix(std::size_t r, std::size_t c) {
    DenseMatrix m(r, c);
    for (float& v : m.data()) v = next();
    return m;
  }
  std::vector<float> vector(std::size_t n, float offset = 0.0f) {
    std::vector<float> v(n);
    for (float& x : v) x = offset + next();
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

inline WeightSet synth_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  WeightStream s(seed);
  const std::size_t d = cfg.d_model, m = cfg.d_ff;
  WeightSet ws;
  ws.embedding = s.matrix(cfg.vocab, d);
  ws.layers.resize(cfg.layers);
  for (auto& L : ws.layers) {
    L.ln1_g = s.vector(d, 1.0f);
    L.ln1_b = s.vector(d);
    L.wq = s.matrix(d, d);
    L.wk = s.matrix(d, d);
    L.wv = s.matrix(d, d);
    L.wo = s.matrix(d, d);
    L.ln2_g = s.vector(d, 1.0f);
    L.ln2_b = s.vector(d);
    L.w1 = s.matrix(d, m);
    L.w2 = s.matrix(m, d);
  }
  ws.lnf_g = s.vector(d, 1.0f);
  ws.lnf_b = s.vector(d);
  ws.out_proj = s.matrix(d, cfg.vocab);
  return ws;
}

namespace detail {

struct TensorRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::span<const float> data;
};

inline std::vector<TensorRef> tensor_list(const WeightSet& ws) {
  std::vector<TensorRef> out;
  auto mat = [&](std::string name, const DenseMatrix& m) {
    out.push_back({std::move(name),
                   {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                   m.data()});
  };
  auto vec = [&](std::string name, const std::vector<float>& v) {
    out.push_back({std::move(name), {static_cast<std::uint32_t>(v.size())}, v});
  };
  mat("embedding", ws.embedding);
  for (std::size_t l = 0; l < ws.layers.size(); ++l) {
    const auto& L = ws.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    vec(p + "ln1.g", L.ln1_g);
    vec(p + "ln1.b", L.ln1_b);
    mat(p + "wq", L.wq);
    mat(p + "wk", L.wk);
    mat(p + "wv", L.wv);
    mat(p + "wo", L.wo);
    vec(p + "ln2.g", L.ln2_g);
    vec(p + "ln2.b", L.ln2_b);
    mat(p + "w1", L.w1);
    mat(p + "w2", L.w2);
  }
  vec("ln_f.g", ws.lnf_g);
  vec("ln_f.b", ws.lnf_b);
  mat("out_proj", ws.out_proj);
  return out;
}

inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}
  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw ParseError(std::string("weight file truncated reading ") + what + " at byte offset " +
                       std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
                       std::to_string(buf_.size() - pos_) + ")");
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(buf_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_weights(const WeightSet& ws) {
  const auto tensors = detail::tensor_list(ws);
  std::string b = "FVW1";
  detail::put_u32(b, 1);
  detail::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u16(b, static_cast<std::uint16_t>(t.name.size()));
    b += t.name;
    b.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(b, d);
    for (float v : t.data) detail::put_u32(b, std::bit_cast<std::uint32_t>(v));
  }
  return b;
}

inline void save_weights(const WeightSet& ws, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weights to " + path.string());
  const std::string b = serialize_weights(ws);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Parses FVW1 bytes and checks every tensor's name and shape against `cfg`.
inline WeightSet deserialize_weights(std::string bytes, const ModelConfig& cfg) {
  cfg.validate();
  detail::ByteReader r(std::move(bytes));
  if (r.bytes(4, "magic") != "FVW1") throw ParseError("bad magic at byte offset 0 (expected FVW1)");
  const std::size_t version_at = r.offset();
  const auto version = r.u32("version");
  if (version != 1) {
    throw ParseError("unsupported format version " + std::to_string(version) + " at byte offset " +
                     std::to_string(version_at));
  }

  // Shapes the config implies, in file order.
  WeightSet ws;
  ws.embedding = DenseMatrix(cfg.vocab, cfg.d_model);
  ws.layers.resize(cfg.layers);
  const std::size_t d = cfg.d_model, m = cfg.d_ff;
  for (auto& L : ws.layers) {
    L.ln1_g.resize(d);
    L.ln1_b.resize(d);
    L.wq = DenseMatrix(d, d);
    L.wk = DenseMatrix(d, d);
    L.wv = DenseMatrix(d, d);
    L.wo = DenseMatrix(d, d);
    L.ln2_g.resize(d);
    L.ln2_b.resize(d);
    L.w1 = DenseMatrix(d, m);
    L.w2 = DenseMatrix(m, d);
  }
  ws.lnf_g.resize(d);
  ws.lnf_b.resize(d);
  ws.out_proj = DenseMatrix(d, cfg.vocab);
  auto expected = detail::tensor_list(ws);

  const std::size_t count_at = r.offset();
  const auto count = r.u32("tensor count");
  if (count != expected.size()) {
    // Walk the file's headers to find where it departs from the config.
    std::string next;
    try {
      detail::ByteReader scan = r;
      for (std::size_t i = 0; i < count && i < expected.size(); ++i) {
        const auto name = scan.bytes(scan.u16("name length"), "tensor name");
        if (name != expected[i].name) {
          next = expected[i].name;
          break;
        }
        std::uint64_t elems = 1;
        for (auto rank = scan.u8("rank"); rank > 0; --rank) elems *= scan.u32("dims");
        scan.skip(elems * 4, "tensor data");
      }
    } catch (const ParseError&) {
    }
    if (next.empty()) {
      next = count < expected.size() ? expected[count].name
                                     : "extra tensor #" + std::to_string(expected.size());
    }
    throw ParseError("tensor count " + std::to_string(count) + " at byte offset " +
                     std::to_string(count_at) + " does not match config (" +
                     std::to_string(expected.size()) + " tensors); first mismatched tensor: " +
                     next);
  }
  for (const auto& t : expected) {
    const std::size_t at = r.offset();
    const auto name_len = r.u16("name length");
    const auto name = r.bytes(name_len, "tensor name");
    if (name != t.name) {
      throw ParseError("tensor name '" + name + "' at byte offset " + std::to_string(at) +
                       " where '" + t.name + "' was expected");
    }
    const auto rank = r.u8("rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto& v : dims) v = r.u32("dims");
    if (dims != t.dims) {
      std::string got, want;
      for (auto v : dims) got += (got.empty() ? "" : "x") + std::to_string(v);
      for (auto v : t.dims) want += (want.empty() ? "" : "x") + std::to_string(v);
      throw ParseError("tensor '" + t.name + "' has shape [" + got + "] at byte offset " +
                       std::to_string(at) + ", config requires [" + want + "]");
    }
    r.need(t.data.size() * 4, t.name.c_str());
    auto* dst = const_cast<float*>(t.data.data());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const std::size_t vat = r.offset();
      const float v = std::bit_cast<float>(r.u32("tensor data"));
      if (!std::isfinite(v)) {
        throw ParseError("non-finite value in tensor '" + t.name + "' at byte offset " +
                         std::to_string(vat));
      }
      dst[i] = v;
    }
  }
  if (!r.at_end()) {
    throw ParseError("trailing bytes after last tensor at byte offset " + std::to_string(r.offset()));
  }
  return ws;
}

inline WeightSet load_weights(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open weights " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(std::move(bytes), cfg);
}

}  // namespace fastv
