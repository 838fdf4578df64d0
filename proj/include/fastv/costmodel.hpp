#pragma once

// Analytic FLOPs model (1 FLOP == 1 multiply-accumulate) for the attention
// and FFN blocks, the reduction ratio from pruning after layer K, (K, R) grid
// sweeps, and an exact check against an instrumented MacCounter.
//
// Per layer over n tokens: 4nd^2 (Q, K, V, output projections)
//                        + 2n^2d (scores and weighted values)
//                        + 2ndm (two FFN matmuls).
// Embedding lookup, norms, softmax, residual adds and the vocabulary
// projection are outside the model.

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastv/errors.hpp"
#include "fastv/numkernel.hpp"
#include "fastv/weights.hpp"

namespace fastv {

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("FLOPs count overflows 64 bits");
  return r;
}
inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("FLOPs count overflows 64 bits");
  return r;
}

}  // namespace detail

struct LayerFlops {
  std::uint64_t projections = 0;  // 4nd^2
  std::uint64_t attention = 0;    // 2n^2d
  std::uint64_t ffn = 0;          // 2ndm
  std::uint64_t total() const { return detail::checked_add(detail::checked_add(projections, attention), ffn); }
};

/// Term-by-term cost of one layer. Throws std::overflow_error past 2^64.
inline LayerFlops layer_flops(std::uint64_t n, std::uint64_t d, std::uint64_t m) {
  using detail::checked_mul;
  LayerFlops f;
  f.projections = checked_mul(checked_mul(checked_mul(4, n), d), d);
  f.attention = checked_mul(checked_mul(checked_mul(2, n), n), d);
  f.ffn = checked_mul(checked_mul(checked_mul(2, n), d), m);
  return f;
}

inline std::uint64_t flops_per_layer(std::uint64_t n, std::uint64_t d, std::uint64_t m) {
  return layer_flops(n, d, m).total();
}

enum class CostMode { AllTokens, ImageOnly };

inline std::string_view to_string(CostMode m) {
  return m == CostMode::AllTokens ? "eq5" : "image-only";
}

inline CostMode parse_cost_mode(std::string_view s) {
  if (s == "eq5") return CostMode::AllTokens;
  if (s == "image-only") return CostMode::ImageOnly;
  throw ConfigError("unknown cost mode '" + std::string(s) + "' (expected eq5|image-only)");
}

struct CostParams {
  std::uint64_t n = 0;      // total input tokens
  std::uint64_t n_img = 0;  // image tokens (ImageOnly mode)
  std::uint64_t d = 0;
  std::uint64_t m = 0;
  std::uint64_t T = 0;
  std::uint64_t K = 0;
  int R = 0;  // percent
  CostMode mode = CostMode::AllTokens;

  void validate() const {
    if (n == 0) throw ConfigError("cost model: n == 0 leaves the reduction ratio undefined");
    if (T == 0) throw ConfigError("cost model: T must be >= 1");
    if (K > T) throw ConfigError("cost model: K=" + std::to_string(K) + " > T=" + std::to_string(T));
    if (R < 0 || R > 100) throw ConfigError("cost model: R=" + std::to_string(R) + " outside [0,100]");
    if (n_img > n) throw ConfigError("cost model: n_img > n");
  }

  /// Tokens entering layers after K.
  std::uint64_t pruned_tokens() const {
    const auto r = static_cast<std::uint64_t>(R);
    if (mode == CostMode::AllTokens) return n * (100 - r) / 100;
    return n - r * n_img / 100;
  }
};

struct FlopsReport {
  CostMode mode = CostMode::AllTokens;
  std::uint64_t n_pruned = 0;
  std::vector<std::uint64_t> per_layer;  // analytic cost of layers 1..T under pruning
  std::uint64_t baseline = 0;            // T * C(n)
  std::uint64_t pruned = 0;              // K * C(n) + (T - K) * C(n_hat)
  double reduction = 0.0;                // 1 - pruned / baseline
};

inline FlopsReport flops_report(const CostParams& p) {
  using detail::checked_add;
  using detail::checked_mul;
  p.validate();
  FlopsReport r;
  r.mode = p.mode;
  r.n_pruned = p.pruned_tokens();
  const std::uint64_t full = flops_per_layer(p.n, p.d, p.m);
  const std::uint64_t reduced = flops_per_layer(r.n_pruned, p.d, p.m);
  for (std::uint64_t l = 1; l <= p.T; ++l) r.per_layer.push_back(l <= p.K ? full : reduced);
  r.baseline = checked_mul(p.T, full);
  r.pruned = checked_add(checked_mul(p.K, full), checked_mul(p.T - p.K, reduced));
  if (r.baseline == 0) throw ConfigError("cost model: baseline cost is zero (d == 0?)");
  // Difference is exact in integers; one rounding in the final division.
  r.reduction = static_cast<double>(r.baseline - r.pruned) / static_cast<double>(r.baseline);
  return r;
}

inline double reduction_ratio(const CostParams& p) { return flops_report(p).reduction; }

struct GridCell {
  std::uint64_t K = 0;
  int R = 0;
  FlopsReport report;
};

struct IntRange {
  std::int64_t first = 0;
  std::int64_t last = 0;
  std::int64_t step = 1;
  std::vector<std::int64_t> values() const {
    std::vector<std::int64_t> v;
    for (auto x = first; x <= last; x += step) v.push_back(x);
    return v;
  }
};

/// Parses "A..B" or "A..B:STEP".
inline IntRange parse_range(std::string_view text) {
  IntRange r;
  const auto dots = text.find("..");
  if (dots == std::string_view::npos) throw ConfigError("range '" + std::string(text) + "' must look like A..B[:STEP]");
  auto rest = text.substr(dots + 2);
  const auto colon = rest.find(':');
  auto num = [&](std::string_view s) {
    std::int64_t v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("range '" + std::string(text) + "': bad integer '" + std::string(s) + "'");
    return v;
  };
  r.first = num(text.substr(0, dots));
  r.last = num(rest.substr(0, colon));
  if (colon != std::string_view::npos) r.step = num(rest.substr(colon + 1));
  if (r.step <= 0) throw ConfigError("range '" + std::string(text) + "': step must be positive");
  if (r.last < r.first) throw ConfigError("range '" + std::string(text) + "' is empty");
  return r;
}

/// Every (K, R) cell in row-major (K outer, R inner) order.
inline std::vector<GridCell> grid(CostParams base, const IntRange& ks, const IntRange& rs) {
  std::vector<GridCell> cells;
  for (auto k : ks.values()) {
    for (auto r : rs.values()) {
      if (k < 0) throw ConfigError("grid: negative K");
      base.K = static_cast<std::uint64_t>(k);
      base.R = static_cast<int>(r);
      cells.push_back({base.K, base.R, flops_report(base)});
    }
  }
  return cells;
}

inline std::string grid_csv(const std::vector<GridCell>& cells) {
  std::string out = "K,R,reduction,flops_baseline,flops_pruned,mode\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.12g", c.report.reduction);
    out += std::to_string(c.K) + "," + std::to_string(c.R) + "," + buf + "," +
           std::to_string(c.report.baseline) + "," + std::to_string(c.report.pruned) + "," +
           std::string(to_string(c.report.mode)) + "\n";
  }
  return out;
}

struct ScopeCheck {
  std::size_t layer = 0;
  std::string term;  // "projections" | "attention" | "ffn"
  std::uint64_t expected = 0;
  std::uint64_t actual = 0;
  bool ok() const { return expected == actual; }
};

struct CounterCheckReport {
  std::vector<ScopeCheck> checks;
  std::uint64_t excluded_macs = 0;  // scopes outside the model (e.g. lm_head)
  bool ok() const {
    for (const auto& c : checks)
      if (!c.ok()) return false;
    return true;
  }
  std::string diagnostics() const {
    std::string s;
    for (const auto& c : checks)
      if (!c.ok())
        s += "layer " + std::to_string(c.layer) + " " + c.term + ": expected " +
             std::to_string(c.expected) + ", counted " + std::to_string(c.actual) + "\n";
    return s;
  }
};

/// Compares a prefill counter with the analytic terms. `tokens_per_layer[l-1]`
/// is the row count layer l ran over (n, or n_hat after K under pruning).
inline CounterCheckReport verify_against_counter(const ModelConfig& cfg,
                                                 const std::vector<std::uint64_t>& tokens_per_layer,
                                                 const MacCounter& counter) {
  if (tokens_per_layer.size() != cfg.layers) {
    throw ContractError("verify_against_counter: need one token count per layer");
  }
  CounterCheckReport rep;
  std::uint64_t in_model = 0;
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const auto f = layer_flops(tokens_per_layer[l - 1], cfg.d_model, cfg.d_ff);
    auto at = [&](const char* what) { return counter.scope("layer" + std::to_string(l) + "/" + what); };
    ScopeCheck proj{l, "projections", f.projections, at("qkv") + at("out_proj")};
    ScopeCheck attn{l, "attention", f.attention, at("attn_scores") + at("attn_values")};
    ScopeCheck ffn{l, "ffn", f.ffn, at("ffn")};
    in_model += proj.actual + attn.actual + ffn.actual;
    rep.checks.push_back(proj);
    rep.checks.push_back(attn);
    rep.checks.push_back(ffn);
  }
  rep.excluded_macs = counter.total() - in_model;
  return rep;
}

inline CounterCheckReport verify_against_counter(const ModelConfig& cfg, std::uint64_t n,
                                                 const MacCounter& counter) {
  return verify_against_counter(cfg, std::vector<std::uint64_t>(cfg.layers, n), counter);
}

}  // namespace fastv
