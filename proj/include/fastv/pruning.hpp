#pragma once

// Token ranking and filtering after layer K: attention-rank scoring, random
// and segment-targeted variants, the drop-set selection, and the
// sink + window streaming mask used as a comparison baseline.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fastv/errors.hpp"
#include "fastv/numkernel.hpp"
#include "fastv/segments.hpp"

namespace fastv {

struct AttentionRank {
  friend bool operator==(const AttentionRank&, const AttentionRank&) = default;
};

struct RandomDrop {
  std::uint64_t seed = 0;
  friend bool operator==(const RandomDrop&, const RandomDrop&) = default;
};

enum class TargetStrategy { LowestAttention, HeadFirst };

struct SegmentTarget {
  SegmentKind kind = SegmentKind::Sys;
  TargetStrategy strategy = TargetStrategy::LowestAttention;
  friend bool operator==(const SegmentTarget&, const SegmentTarget&) = default;
};

using PruneCriterion = std::variant<AttentionRank, RandomDrop, SegmentTarget>;

struct PruneConfig {
  std::size_t K = 2;
  int R = 50;  // percent
  PruneCriterion criterion = AttentionRank{};

  /// Checks K/R ranges and criterion compatibility. `layers` is T.
  void validate(std::size_t layers) const {
    if (R < 0 || R > 100) throw ConfigError("fastv: R=" + std::to_string(R) + " outside [0,100]");
    if (K > layers) {
      throw ConfigError("fastv: K=" + std::to_string(K) + " exceeds layer count " +
                        std::to_string(layers));
    }
    if (const auto* t = std::get_if<SegmentTarget>(&criterion); t && t->kind == SegmentKind::Out) {
      throw ConfigError("fastv: segment criterion cannot target out tokens");
    }
    if (K == 0 && needs_scores()) {
      throw ConfigError(
          "fastv: K=0 prunes before any attention is computed; use criterion=random:SEED or "
          "segment:KIND:head-first");
    }
  }

  bool needs_scores() const {
    if (std::holds_alternative<AttentionRank>(criterion)) return true;
    if (const auto* t = std::get_if<SegmentTarget>(&criterion))
      return t->strategy == TargetStrategy::LowestAttention;
    return false;
  }

  SegmentKind target_kind() const {
    if (const auto* t = std::get_if<SegmentTarget>(&criterion)) return t->kind;
    return SegmentKind::Img;
  }

  friend bool operator==(const PruneConfig&, const PruneConfig&) = default;
};

inline std::string to_string(const PruneCriterion& c) {
  if (std::holds_alternative<AttentionRank>(c)) return "attn";
  if (const auto* r = std::get_if<RandomDrop>(&c)) return "random:" + std::to_string(r->seed);
  const auto& t = std::get<SegmentTarget>(c);
  return "segment:" + std::string(to_string(t.kind)) + ":" +
         (t.strategy == TargetStrategy::HeadFirst ? "head-first" : "lowest");
}

inline std::string to_string(const PruneConfig& p) {
  return "K=" + std::to_string(p.K) + ",R=" + std::to_string(p.R) +
         ",criterion=" + to_string(p.criterion);
}

namespace detail {

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("invalid integer '" + std::string(s) + "' for " + std::string(what));
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto at = s.find(sep, start);
    parts.push_back(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return parts;
}

}  // namespace detail

inline PruneCriterion parse_criterion(std::string_view s) {
  const auto parts = detail::split(s, ':');
  if (parts[0] == "attn" && parts.size() == 1) return AttentionRank{};
  if (parts[0] == "random" && parts.size() == 2)
    return RandomDrop{detail::parse_number<std::uint64_t>(parts[1], "random seed")};
  if (parts[0] == "segment" && parts.size() == 3) {
    SegmentTarget t;
    t.kind = parse_segment_kind(parts[1]);
    if (parts[2] == "lowest") {
      t.strategy = TargetStrategy::LowestAttention;
    } else if (parts[2] == "head-first") {
      t.strategy = TargetStrategy::HeadFirst;
    } else {
      throw ConfigError("unknown segment strategy '" + std::string(parts[2]) +
                        "' (expected lowest|head-first)");
    }
    return t;
  }
  throw ConfigError("invalid criterion '" + std::string(s) +
                    "' (expected attn | random:SEED | segment:KIND:STRATEGY)");
}

/// Parses `K=<int>,R=<int>,criterion=<...>`. Omitted keys keep the defaults
/// K=2, R=50, criterion=attn. Range checks against the model happen in validate().
inline PruneConfig parse_prune_config(std::string_view text) {
  PruneConfig p;
  for (auto item : detail::split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("--fastv: expected key=value, got '" + std::string(item) + "'");
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "K") {
      p.K = detail::parse_number<std::size_t>(value, "K");
    } else if (key == "R") {
      p.R = detail::parse_number<int>(value, "R");
    } else if (key == "criterion") {
      p.criterion = parse_criterion(value);
    } else {
      throw ConfigError("--fastv: unknown key '" + std::string(key) + "'");
    }
  }
  if (p.R < 0 || p.R > 100) throw ConfigError("fastv: R=" + std::to_string(p.R) + " outside [0,100]");
  return p;
}

struct PruneDecision {
  std::vector<std::size_t> kept;     // ascending original positions
  std::vector<std::size_t> dropped;  // ascending
  std::vector<float> scores;         // one per candidate in the target span; empty if unscored
  Span candidates{SegmentKind::Img, 0, 0};

  static PruneDecision keep_all(std::size_t n_input) {
    PruneDecision d;
    d.kept.resize(n_input);
    std::iota(d.kept.begin(), d.kept.end(), std::size_t{0});
    return d;
  }

  friend bool operator==(const PruneDecision&, const PruneDecision&) = default;
};

// Streaming accumulation of received attention. For each head the column sums
// of its probability matrix are divided by the number of queries that can see
// the column (n - p under causal masking); heads are then averaged.
class ReceivedAttention {
 public:
  ReceivedAttention(std::size_t n_input, Span candidates)
      : n_(n_input), span_(candidates), sum_(candidates.size(), 0.0) {}

  void add_head(const DenseMatrix& probs) {
    if (probs.rows() != n_ || probs.cols() != n_) {
      throw ContractError("score_received_attention: head matrix " + probs.shape_string() +
                          " is not " + std::to_string(n_) + "x" + std::to_string(n_));
    }
    std::vector<double> col(span_.size(), 0.0);
    for (std::size_t q = 0; q < n_; ++q) {
      auto row = probs.row(q);
      for (std::size_t i = 0; i < span_.size(); ++i) col[i] += row[span_.start + i];
    }
    for (std::size_t i = 0; i < span_.size(); ++i)
      sum_[i] += col[i] / static_cast<double>(n_ - (span_.start + i));
    ++heads_;
  }

  std::vector<float> scores() const {
    std::vector<float> out(sum_.size(), 0.0f);
    if (heads_ == 0) return out;
    for (std::size_t i = 0; i < sum_.size(); ++i)
      out[i] = static_cast<float>(sum_[i] / static_cast<double>(heads_));
    return out;
  }

 private:
  std::size_t n_;
  Span span_;
  std::vector<double> sum_;
  std::size_t heads_ = 0;
};

/// Mean over heads of per-column received attention, normalized by each
/// column's causal visibility count. One score per position of `candidates`.
inline std::vector<float> score_received_attention(std::span<const DenseMatrix> heads,
                                                   Span candidates) {
  if (candidates.size() == 0) return {};
  if (heads.empty()) throw ContractError("score_received_attention: no heads");
  ReceivedAttention acc(heads.front().rows(), candidates);
  for (const auto& h : heads) acc.add_head(h);
  return acc.scores();
}

/// floor(R% of span_len), computed in integers.
inline std::size_t drop_count(int R, std::size_t span_len) {
  if (R < 0 || R > 100) throw ConfigError("R=" + std::to_string(R) + " outside [0,100]");
  return static_cast<std::size_t>(R) * span_len / 100;
}

namespace detail {

// Unbiased draw in [0, bound) by rejection; bound >= 1.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

inline PruneDecision assemble(std::size_t n_input, Span span, std::vector<std::size_t> dropped,
                              std::vector<float> scores) {
  std::sort(dropped.begin(), dropped.end());
  PruneDecision d;
  d.candidates = span;
  d.scores = std::move(scores);
  d.dropped = std::move(dropped);
  d.kept.reserve(n_input - d.dropped.size());
  std::size_t j = 0;
  for (std::size_t p = 0; p < n_input; ++p) {
    if (j < d.dropped.size() && d.dropped[j] == p) {
      ++j;
    } else {
      d.kept.push_back(p);
    }
  }
  return d;
}

}  // namespace detail

/// Drops floor(R% * |span|) positions of `span` according to `criterion`.
/// Scored criteria drop the lowest scores, breaking ties by dropping the
/// higher position first. `scores` must be present (one per span position)
/// for scored criteria and is ignored otherwise.
inline PruneDecision select_pruned(const PruneCriterion& criterion, std::span<const float> scores,
                                   Span span, int R, std::size_t n_input) {
  if (span.end > n_input || span.start > span.end) {
    throw ContractError("select_pruned: span [" + std::to_string(span.start) + "," +
                        std::to_string(span.end) + ") outside input of length " +
                        std::to_string(n_input));
  }
  const std::size_t k = drop_count(R, span.size());
  std::vector<std::size_t> dropped;
  dropped.reserve(k);

  const auto* target = std::get_if<SegmentTarget>(&criterion);
  const bool scored = std::holds_alternative<AttentionRank>(criterion) ||
                      (target && target->strategy == TargetStrategy::LowestAttention);
  if (scored) {
    if (scores.size() != span.size()) {
      throw ContractError("select_pruned: " + std::to_string(scores.size()) + " scores for span of " +
                          std::to_string(span.size()));
    }
    std::vector<std::size_t> order(span.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] < scores[b];
      return a > b;
    });
    for (std::size_t i = 0; i < k; ++i) dropped.push_back(span.start + order[i]);
    return detail::assemble(n_input, span, std::move(dropped),
                            std::vector<float>(scores.begin(), scores.end()));
  }
  if (const auto* r = std::get_if<RandomDrop>(&criterion)) {
    // Partial Fisher-Yates over the span.
    std::vector<std::size_t> pool(span.size());
    std::iota(pool.begin(), pool.end(), span.start);
    std::mt19937_64 rng(r->seed);
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + detail::bounded(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      dropped.push_back(pool[i]);
    }
    return detail::assemble(n_input, span, std::move(dropped), {});
  }
  // Head-first: the leading positions of the span.
  for (std::size_t i = 0; i < k; ++i) dropped.push_back(span.start + i);
  return detail::assemble(n_input, span, std::move(dropped), {});
}

// Sink + sliding-window attention pattern: query q sees keys k < sink and
// q - window < k <= q.
struct StreamingMask {
  std::size_t sink = 0;
  std::size_t window = 1;

  void validate() const {
    if (window < 1) throw ConfigError("streaming: W must be >= 1");
  }
  bool allows(std::size_t q, std::size_t k) const noexcept {
    if (k > q) return false;
    return k < sink || q - k < window;
  }
  /// True when the mask equals plain causal attention for inputs of length n.
  bool degenerate(std::size_t n) const noexcept { return sink + window >= n; }

  friend bool operator==(const StreamingMask&, const StreamingMask&) = default;
};

inline StreamingMask parse_streaming_mask(std::string_view text) {
  StreamingMask s;
  bool have_s = false, have_w = false;
  for (auto item : detail::split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("--streaming: expected key=value, got '" + std::string(item) + "'");
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "S") {
      s.sink = detail::parse_number<std::size_t>(value, "S");
      have_s = true;
    } else if (key == "W") {
      s.window = detail::parse_number<std::size_t>(value, "W");
      have_w = true;
    } else {
      throw ConfigError("--streaming: unknown key '" + std::string(key) + "'");
    }
  }
  if (!have_s || !have_w) throw ConfigError("--streaming requires both S=<int> and W=<int>");
  s.validate();
  return s;
}

inline std::string to_string(const StreamingMask& s) {
  return "S=" + std::to_string(s.sink) + ",W=" + std::to_string(s.window);
}

}  // namespace fastv
