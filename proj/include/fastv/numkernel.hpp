#pragma once

// Minimal dense float32 kernel: row-major matrices, a blocked matmul with a
// multiply-accumulate counter, masked row softmax, layer norm and GELU.
//
// Every output element of matmul is accumulated in ascending inner-index
// order starting from zero, independent of the number of rows in either
// operand. Removing a row from A, or appending columns to B, therefore never
// changes the bits of the remaining outputs. The pruning oracle relies on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fastv/errors.hpp"

namespace fastv {

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ContractError("DenseMatrix: data length " + std::to_string(data_.size()) +
                          " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    DenseMatrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw ContractError("DenseMatrix::from_rows: ragged rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  void append_row(std::span<const float> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) {
      throw ContractError("append_row: row length " + std::to_string(values.size()) +
                          " != cols " + std::to_string(cols_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  DenseMatrix select_rows(std::span<const std::size_t> indices) const {
    DenseMatrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= rows_) throw ContractError("select_rows: index out of range");
      std::copy_n(data_.data() + indices[i] * cols_, cols_, out.data_.data() + i * cols_);
    }
    return out;
  }

  DenseMatrix transposed() const {
    DenseMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  // Bitwise equality (values are finite, so float == is adequate except for
  // signed zeros, which we do treat as distinct).
  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) return false;
    for (std::size_t i = 0; i < a.data_.size(); ++i) {
      if (std::signbit(a.data_[i]) != std::signbit(b.data_[i]) || !(a.data_[i] == b.data_[i]))
        return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Multiply-accumulate counter. One MAC is one FLOP in the cost model.
class MacCounter {
 public:
  void add(std::string_view scope, std::uint64_t macs) {
    total_ += macs;
    auto it = per_scope_.find(scope);
    if (it == per_scope_.end()) {
      per_scope_.emplace(std::string(scope), macs);
    } else {
      it->second += macs;
    }
  }

  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t scope(std::string_view label) const {
    auto it = per_scope_.find(label);
    return it == per_scope_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::uint64_t, std::less<>>& per_scope() const noexcept {
    return per_scope_;
  }

  void merge(const MacCounter& other) {
    for (const auto& [k, v] : other.per_scope_) add(k, v);
  }

  friend bool operator==(const MacCounter&, const MacCounter&) = default;

 private:
  std::uint64_t total_ = 0;
  std::map<std::string, std::uint64_t, std::less<>> per_scope_;
};

namespace detail {

// C[M x N] += A[M x K] * B[K x N], all row-major with explicit leading dims.
// Full 4 x 32 output tiles live in a local accumulator while K streams past;
// edge tiles take a scalar loop. Both perform, per output element, the same
// sequence c += a[k] * b[k] for k = 0..K-1.
inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileCols = 32;

inline void gemm_tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                      std::size_t ldc, std::size_t k) {
  float acc[kTileRows][kTileCols];
  for (std::size_t r = 0; r < kTileRows; ++r)
    for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* brow = b + kk * ldb;
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const float x = a[r * lda + kk];
      for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] += x * brow[j];
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r)
    for (std::size_t j = 0; j < kTileCols; ++j) c[r * ldc + j] = acc[r][j];
}

inline void gemm_edge(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                      std::size_t ldc, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float x = a[r * lda + kk];
      for (std::size_t j = 0; j < n; ++j) c[r * ldc + j] += x * b[kk * ldb + j];
    }
}

inline void gemm_accumulate(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                            float* c, std::size_t ldc, std::size_t m, std::size_t k,
                            std::size_t n) {
  constexpr std::size_t kBlockN = 256;
  constexpr std::size_t kBlockK = 256;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t jn = std::min(kBlockN, n - j0);
    for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
      const std::size_t kn = std::min(kBlockK, k - k0);
      const float* bk = b + k0 * ldb + j0;
      std::size_t i = 0;
      for (; i + kTileRows <= m; i += kTileRows) {
        const float* ai = a + i * lda + k0;
        float* ci = c + i * ldc + j0;
        std::size_t j = 0;
        for (; j + kTileCols <= jn; j += kTileCols) gemm_tile(ai, lda, bk + j, ldb, ci + j, ldc, kn);
        if (j < jn) gemm_edge(ai, lda, bk + j, ldb, ci + j, ldc, kTileRows, kn, jn - j);
      }
      if (i < m) gemm_edge(a + i * lda + k0, lda, bk, ldb, c + i * ldc + j0, ldc, m - i, kn, jn);
    }
  }
}

}  // namespace detail

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: dimension mismatch " + a.shape_string() + " x " +
                        b.shape_string());
  }
  DenseMatrix c(a.rows(), b.cols());
  if (a.rows() && a.cols() && b.cols()) {
    detail::gemm_accumulate(a.data().data(), a.cols(), b.data().data(), b.cols(),
                            c.data().data(), c.cols(), a.rows(), a.cols(), b.cols());
  }
  return c;
}

/// Standard product; adds a.rows * a.cols * b.cols to `counter` under `scope`.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b, MacCounter& counter,
                          std::string_view scope) {
  DenseMatrix c = matmul(a, b);
  counter.add(scope, static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols());
  return c;
}

inline constexpr float kMasked = -std::numeric_limits<float>::infinity();

/// Row softmax stabilized by the row maximum. Entries equal to kMasked map to
/// exactly zero. A row with no unmasked entry is a contract violation.
inline DenseMatrix softmax_rows(const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    float mx = kMasked;
    for (float v : in) mx = std::max(mx, v);
    if (mx == kMasked) {
      throw ContractError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    float sum = 0.0f;
    for (std::size_t c = 0; c < in.size(); ++c) {
      const float e = in[c] == kMasked ? 0.0f : std::exp(in[c] - mx);
      o[c] = e;
      sum += e;
    }
    const float inv = 1.0f / sum;
    for (float& v : o) v *= inv;
  }
  return out;
}

inline DenseMatrix layer_norm(const DenseMatrix& x, std::span<const float> gain,
                              std::span<const float> bias, float eps = 1e-5f) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ContractError("layer_norm: gain/bias length " + std::to_string(gain.size()) + "/" +
                        std::to_string(bias.size()) + " != cols " + std::to_string(x.cols()));
  }
  DenseMatrix out(x.rows(), x.cols());
  const float n = static_cast<float>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    float mean = 0.0f;
    for (float v : in) mean += v;
    mean /= n;
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= n;
    const float inv = 1.0f / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))),
// sqrt(2/pi) = 0.7978845608028654.
inline constexpr float kGeluSqrt2OverPi = 0.7978845608028654f;
inline constexpr float kGeluCubic = 0.044715f;

inline float gelu(float x) {
  return 0.5f * x * (1.0f + std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

inline DenseMatrix gelu(const DenseMatrix& x) {
  DenseMatrix out = x;
  for (float& v : out.data()) v = gelu(v);
  return out;
}

inline void add_inplace(DenseMatrix& x, const DenseMatrix& delta) {
  if (x.rows() != delta.rows() || x.cols() != delta.cols()) {
    throw ContractError("add_inplace: shape mismatch " + x.shape_string() + " vs " +
                        delta.shape_string());
  }
  auto xd = x.data();
  auto dd = delta.data();
  for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += dd[i];
}

}  // namespace fastv
