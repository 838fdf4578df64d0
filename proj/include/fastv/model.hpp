#pragma once

// Pre-norm decoder-only transformer with a per-layer KV cache.
//
// Layers are 1-based. With pruning at K, layers 1..K run over every input
// position; the decision is taken from layer K's attention, and layers K+1..T
// run over the surviving positions only. Surviving tokens keep their original
// position indices (sinusoidal positions are added once at the embedding), so
// dropping a token is equivalent to masking it out as a key in later layers.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fastv/errors.hpp"
#include "fastv/numkernel.hpp"
#include "fastv/pruning.hpp"
#include "fastv/segments.hpp"
#include "fastv/weights.hpp"

namespace fastv {

struct LayerCache {
  DenseMatrix keys;
  DenseMatrix values;
  std::vector<std::size_t> positions;  // original positions, ascending
};

struct KVCache {
  std::vector<LayerCache> layers;
  std::size_t length = 0;  // input tokens plus generated tokens fed so far
  std::optional<StreamingMask> streaming;
};

// One query row of post-softmax attention per head, over `positions`.
struct LayerAttention {
  std::vector<std::size_t> positions;
  std::vector<std::vector<float>> heads;
};
using StepAttention = std::vector<LayerAttention>;  // indexed by layer - 1

struct ForwardOptions {
  std::optional<PruneConfig> prune;
  // Applied at prune->K instead of ranking. Lets a from-scratch recompute
  // reproduce an earlier decision.
  std::optional<PruneDecision> forced_decision;
  std::optional<StreamingMask> streaming;
  bool capture_last_rows = false;
  bool capture_layer_k = false;
  std::vector<std::size_t> map_layers;  // 1-based
};

struct PrefillResult {
  KVCache cache;
  std::vector<float> logits;
  std::size_t logits_position = 0;
  std::optional<PruneDecision> decision;
  std::vector<DenseMatrix> layer_k_attention;  // per head, n x n, if requested
  StepAttention last_rows;
  std::map<std::size_t, DenseMatrix> maps;  // layer -> head-averaged attention over positions
};

namespace detail {

inline std::string scope(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "/" + what;
}

// Additive sinusoidal position code, evaluated in double.
inline void add_position_code(std::span<float> row, std::size_t position) {
  const std::size_t d = row.size();
  for (std::size_t i = 0; i < d; i += 2) {
    const double angle =
        static_cast<double>(position) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
    row[i] += static_cast<float>(std::sin(angle));
    if (i + 1 < d) row[i + 1] += static_cast<float>(std::cos(angle));
  }
}

inline DenseMatrix embed(const WeightSet& ws, std::span<const TokenId> ids,
                         std::span<const std::size_t> positions) {
  const std::size_t d = ws.embedding.cols();
  DenseMatrix x(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= ws.embedding.rows()) {
      throw ContractError("embed: token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    auto src = ws.embedding.row(ids[i]);
    auto dst = x.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    add_position_code(dst, positions[i]);
  }
  return x;
}

struct MaskRule {
  const StreamingMask* streaming = nullptr;
  const std::vector<bool>* blocked = nullptr;  // keys masked unless the key is the query itself

  bool plain_causal() const noexcept { return streaming == nullptr && blocked == nullptr; }
  bool allows(std::size_t q, std::size_t k) const noexcept {
    if (k > q) return false;
    if (streaming && !streaming->allows(q, k)) return false;
    if (blocked && k != q && (*blocked)[k]) return false;
    return true;
  }
};

struct AttentionCapture {
  ReceivedAttention* scorer = nullptr;
  std::vector<DenseMatrix>* full_heads = nullptr;
  LayerAttention* last_row = nullptr;
  DenseMatrix* head_average = nullptr;  // rows(q) x rows(k)
};

// Multi-head attention of `q` rows against cached keys/values.
inline DenseMatrix attend(const DenseMatrix& q, std::span<const std::size_t> q_pos,
                          const LayerCache& kv, const MaskRule& mask, std::size_t n_heads,
                          std::size_t layer, MacCounter& counter, const AttentionCapture& cap) {
  const std::size_t rq = q.rows(), rk = kv.keys.rows(), d = q.cols();
  const std::size_t dh = d / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const std::string scores_scope = scope(layer, "attn_scores");
  const std::string values_scope = scope(layer, "attn_values");
  DenseMatrix ctx(rq, d);
  if (cap.last_row) {
    cap.last_row->positions = kv.positions;
    cap.last_row->heads.assign(n_heads, {});
  }
  if (cap.head_average) *cap.head_average = DenseMatrix(rq, rk);
  if (cap.full_heads) cap.full_heads->clear();

  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dh;
    DenseMatrix qh(rq, dh), kt(dh, rk), vh(rk, dh);
    for (std::size_t i = 0; i < rq; ++i)
      for (std::size_t c = 0; c < dh; ++c) qh(i, c) = q(i, c0 + c);
    for (std::size_t j = 0; j < rk; ++j)
      for (std::size_t c = 0; c < dh; ++c) {
        kt(c, j) = kv.keys(j, c0 + c);
        vh(j, c) = kv.values(j, c0 + c);
      }
    DenseMatrix s = matmul(qh, kt, counter, scores_scope);
    for (std::size_t i = 0; i < rq; ++i) {
      auto row = s.row(i);
      const std::size_t qp = q_pos[i];
      if (mask.plain_causal()) {
        for (std::size_t j = 0; j < rk; ++j) row[j] = kv.positions[j] <= qp ? row[j] * scale : kMasked;
      } else {
        for (std::size_t j = 0; j < rk; ++j)
          row[j] = mask.allows(qp, kv.positions[j]) ? row[j] * scale : kMasked;
      }
    }
    DenseMatrix p = softmax_rows(s);
    if (cap.scorer) cap.scorer->add_head(p);
    if (cap.last_row) {
      auto r = p.row(rq - 1);
      cap.last_row->heads[h].assign(r.begin(), r.end());
    }
    if (cap.head_average) {
      auto dst = cap.head_average->data();
      auto src = p.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / static_cast<float>(n_heads);
    }
    DenseMatrix ch = matmul(p, vh, counter, values_scope);
    for (std::size_t i = 0; i < rq; ++i)
      for (std::size_t c = 0; c < dh; ++c) ctx(i, c0 + c) = ch(i, c);
    if (cap.full_heads) cap.full_heads->push_back(std::move(p));
  }
  return ctx;
}

// One transformer layer over the rows of `x`. Their keys and values are
// appended to `cache` before attention, so prefill (empty cache) and decode
// (populated cache) share this path. Rows flagged in `frozen` keep their
// hidden state unchanged.
inline void layer_step(const LayerWeights& w, const ModelConfig& cfg, std::size_t layer,
                       DenseMatrix& x, std::span<const std::size_t> positions, LayerCache& cache,
                       const MaskRule& mask, MacCounter& counter, const AttentionCapture& cap,
                       const std::vector<bool>* frozen = nullptr) {
  const std::string qkv = scope(layer, "qkv");
  DenseMatrix h = layer_norm(x, w.ln1_g, w.ln1_b);
  DenseMatrix q = matmul(h, w.wq, counter, qkv);
  DenseMatrix k = matmul(h, w.wk, counter, qkv);
  DenseMatrix v = matmul(h, w.wv, counter, qkv);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    cache.keys.append_row(k.row(i));
    cache.values.append_row(v.row(i));
    cache.positions.push_back(positions[i]);
  }
  DenseMatrix ctx = attend(q, positions, cache, mask, cfg.n_heads, layer, counter, cap);
  DenseMatrix o = matmul(ctx, w.wo, counter, scope(layer, "out_proj"));

  auto residual = [&](const DenseMatrix& delta) {
    if (!frozen) {
      add_inplace(x, delta);
      return;
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if ((*frozen)[positions[i]]) continue;
      auto xr = x.row(i);
      auto dr = delta.row(i);
      for (std::size_t c = 0; c < xr.size(); ++c) xr[c] += dr[c];
    }
  };
  residual(o);

  const std::string ffn = scope(layer, "ffn");
  DenseMatrix h2 = layer_norm(x, w.ln2_g, w.ln2_b);
  DenseMatrix f = gelu(matmul(h2, w.w1, counter, ffn));
  residual(matmul(f, w.w2, counter, ffn));
}

inline std::vector<float> project_logits(const WeightSet& ws, const DenseMatrix& x, std::size_t row,
                                         MacCounter& counter) {
  DenseMatrix last(1, x.cols());
  auto src = x.row(row);
  std::copy(src.begin(), src.end(), last.row(0).begin());
  DenseMatrix logits = matmul(layer_norm(last, ws.lnf_g, ws.lnf_b), ws.out_proj, counter, "lm_head");
  return {logits.data().begin(), logits.data().end()};
}

inline void check_decision(const PruneDecision& d, std::size_t n) {
  if (d.kept.size() + d.dropped.size() != n || d.kept.empty()) {
    throw ContractError("prune decision covers " + std::to_string(d.kept.size() + d.dropped.size()) +
                        " positions (" + std::to_string(d.kept.size()) + " kept) for " +
                        std::to_string(n) + " inputs");
  }
  for (auto p : d.dropped)
    if (p >= n) throw ContractError("prune decision drops position " + std::to_string(p) + " >= " + std::to_string(n));
}

inline void restrict_rows(DenseMatrix& x, std::vector<std::size_t>& positions,
                          const std::vector<std::size_t>& kept) {
  std::vector<std::size_t> rows;
  rows.reserve(kept.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < positions.size() && j < kept.size(); ++i) {
    if (positions[i] == kept[j]) {
      rows.push_back(i);
      ++j;
    }
  }
  x = x.select_rows(rows);
  positions = kept;
}

}  // namespace detail

/// Forward pass over `ids` at positions 0..n-1, populating a fresh cache.
/// `seq` supplies the spans a pruning decision targets; it may be null when
/// no decision has to be ranked (no pruning, or a forced decision).
inline PrefillResult forward_tokens(const WeightSet& ws, const ModelConfig& cfg,
                                    std::span<const TokenId> ids, const SegmentedSequence* seq,
                                    const ForwardOptions& opts, MacCounter& counter) {
  cfg.validate();
  const std::size_t n = ids.size();
  if (n == 0) throw ContractError("prefill: empty input");
  if (n > cfg.max_seq) {
    throw ConfigError("prefill: input length " + std::to_string(n) + " exceeds max_seq " +
                      std::to_string(cfg.max_seq));
  }
  if (opts.prune && opts.streaming) {
    throw ConfigError("FastV pruning and the streaming mask are mutually exclusive");
  }
  if (opts.streaming) opts.streaming->validate();
  if (opts.prune) {
    if (opts.forced_decision) {
      if (opts.prune->K > cfg.layers) throw ConfigError("fastv: K exceeds layer count");
      detail::check_decision(*opts.forced_decision, n);
    } else {
      opts.prune->validate(cfg.layers);
      if (!seq) throw ContractError("prefill: ranking a decision needs the segmented sequence");
    }
  }

  PrefillResult res;
  res.cache.layers.resize(cfg.layers);
  res.cache.length = n;
  res.cache.streaming = opts.streaming;
  if (opts.capture_last_rows) res.last_rows.resize(cfg.layers);

  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  DenseMatrix x = detail::embed(ws, ids, positions);

  detail::MaskRule mask;
  if (res.cache.streaming) mask.streaming = &*res.cache.streaming;

  auto decide = [&](ReceivedAttention* scorer) {
    if (opts.forced_decision) return *opts.forced_decision;
    const Span target = seq->span(opts.prune->target_kind());
    std::vector<float> scores;
    if (scorer) scores = scorer->scores();
    return select_pruned(opts.prune->criterion, scores, target, opts.prune->R, n);
  };

  if (opts.prune && opts.prune->K == 0) {
    res.decision = decide(nullptr);
    detail::restrict_rows(x, positions, res.decision->kept);
  }

  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const bool at_k = opts.prune && opts.prune->K == l;
    std::optional<ReceivedAttention> scorer;
    if (at_k && !opts.forced_decision && opts.prune->needs_scores()) {
      scorer.emplace(n, seq->span(opts.prune->target_kind()));
    }
    detail::AttentionCapture cap;
    if (scorer) cap.scorer = &*scorer;
    if (at_k && opts.capture_layer_k) cap.full_heads = &res.layer_k_attention;
    if (opts.capture_last_rows) cap.last_row = &res.last_rows[l - 1];
    DenseMatrix avg;
    const bool want_map =
        std::find(opts.map_layers.begin(), opts.map_layers.end(), l) != opts.map_layers.end();
    if (want_map) cap.head_average = &avg;

    detail::layer_step(ws.layers[l - 1], cfg, l, x, positions, res.cache.layers[l - 1], mask,
                       counter, cap);

    if (want_map) {
      DenseMatrix full(n, n);
      for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = 0; j < positions.size(); ++j) full(positions[i], positions[j]) = avg(i, j);
      res.maps[l] = std::move(full);
    }
    if (at_k) {
      res.decision = decide(scorer ? &*scorer : nullptr);
      detail::restrict_rows(x, positions, res.decision->kept);
    }
  }

  res.logits_position = positions.back();
  res.logits = detail::project_logits(ws, x, x.rows() - 1, counter);
  return res;
}

inline PrefillResult prefill(const WeightSet& ws, const ModelConfig& cfg, const SegmentedSequence& seq,
                             const ForwardOptions& opts, MacCounter& counter) {
  return forward_tokens(ws, cfg, seq.token_ids(), &seq, opts, counter);
}

struct DecodeOutput {
  std::vector<float> logits;
  StepAttention attention;
};

/// Feeds `token` at `position` (== cache.length). Every layer appends one
/// key/value row and attends over its live positions.
inline DecodeOutput decode_step(const WeightSet& ws, const ModelConfig& cfg, KVCache& cache,
                                TokenId token, std::size_t position, MacCounter& counter,
                                bool capture_attention = true) {
  if (position != cache.length) {
    throw ContractError("decode_step: position " + std::to_string(position) +
                        " != cache length " + std::to_string(cache.length));
  }
  if (position >= cfg.max_seq) {
    throw ContractError("decode_step: position " + std::to_string(position) + " reaches max_seq " +
                        std::to_string(cfg.max_seq));
  }
  const TokenId ids[1] = {token};
  const std::size_t pos[1] = {position};
  DenseMatrix x = detail::embed(ws, ids, pos);
  detail::MaskRule mask;
  if (cache.streaming) mask.streaming = &*cache.streaming;

  DecodeOutput out;
  if (capture_attention) out.attention.resize(cfg.layers);
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    detail::AttentionCapture cap;
    if (capture_attention) cap.last_row = &out.attention[l - 1];
    detail::layer_step(ws.layers[l - 1], cfg, l, x, pos, cache.layers[l - 1], mask, counter, cap);
  }
  ++cache.length;
  out.logits = detail::project_logits(ws, x, 0, counter);
  return out;
}

/// Index of the largest logit; ties go to the lower id.
inline TokenId argmax(std::span<const float> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

enum class StopReason { Eos, MaxNewTokens, MaxSeq };

inline std::string_view to_string(StopReason s) {
  switch (s) {
    case StopReason::Eos: return "eos";
    case StopReason::MaxNewTokens: return "max_new_tokens";
    case StopReason::MaxSeq: return "max_seq";
  }
  return "?";
}

struct GenerateOptions {
  std::optional<PruneConfig> prune;
  std::optional<StreamingMask> streaming;
  std::size_t max_new_tokens = 16;
  TokenId eos_id = 0;
  // Keep, for each output token, the attention rows of the query that produced it.
  bool record_attention = false;
  std::vector<std::size_t> map_layers;  // 1-based; L x L head-averaged maps
};

struct GenerationResult {
  std::vector<TokenId> output_ids;
  std::vector<StepAttention> attention;  // one entry per output token when recorded
  MacCounter counter;
  std::uint64_t prefill_macs = 0;
  double prefill_seconds = 0.0;
  double decode_seconds = 0.0;
  StopReason stop = StopReason::MaxNewTokens;
  std::optional<PruneDecision> decision;
  std::vector<std::size_t> live_positions;  // per layer, at the end of generation
  std::map<std::size_t, DenseMatrix> maps;
};

inline GenerationResult generate_greedy(const WeightSet& ws, const ModelConfig& cfg,
                                        const SegmentedSequence& seq, const GenerateOptions& opts) {
  if (opts.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  using Clock = std::chrono::steady_clock;
  GenerationResult res;

  ForwardOptions fo;
  fo.prune = opts.prune;
  fo.streaming = opts.streaming;
  fo.capture_last_rows = opts.record_attention;
  fo.map_layers = opts.map_layers;

  const auto t0 = Clock::now();
  PrefillResult pre = prefill(ws, cfg, seq, fo, res.counter);
  const auto t1 = Clock::now();
  res.prefill_seconds = std::chrono::duration<double>(t1 - t0).count();
  res.prefill_macs = res.counter.total();
  res.decision = pre.decision;
  KVCache cache = std::move(pre.cache);

  const std::size_t n = seq.n_input();
  const std::size_t total_len = n + opts.max_new_tokens;
  for (std::size_t l = 1; l <= cfg.layers && !opts.map_layers.empty(); ++l) {
    if (auto it = pre.maps.find(l); it != pre.maps.end()) {
      DenseMatrix full(total_len, total_len);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) full(i, j) = it->second(i, j);
      res.maps[l] = std::move(full);
    }
  }
  auto scatter_maps = [&](const StepAttention& att, std::size_t query) {
    for (auto& [l, m] : res.maps) {
      const auto& la = att[l - 1];
      for (const auto& head : la.heads)
        for (std::size_t j = 0; j < head.size(); ++j)
          m(query, la.positions[j]) += head[j] / static_cast<float>(la.heads.size());
    }
  };

  res.output_ids.push_back(argmax(pre.logits));
  if (opts.record_attention) res.attention.push_back(std::move(pre.last_rows));

  res.stop = StopReason::MaxNewTokens;
  const auto t2 = Clock::now();
  if (res.output_ids.back() == opts.eos_id) {
    res.stop = StopReason::Eos;
  } else {
    while (res.output_ids.size() < opts.max_new_tokens) {
      const std::size_t position = n + res.output_ids.size() - 1;
      if (position >= cfg.max_seq) {
        res.stop = StopReason::MaxSeq;
        break;
      }
      const bool capture = opts.record_attention || !res.maps.empty();
      DecodeOutput step = decode_step(ws, cfg, cache, res.output_ids.back(), position, res.counter, capture);
      if (!res.maps.empty()) scatter_maps(step.attention, position);
      res.output_ids.push_back(argmax(step.logits));
      if (opts.record_attention) res.attention.push_back(std::move(step.attention));
      if (res.output_ids.back() == opts.eos_id) {
        res.stop = StopReason::Eos;
        break;
      }
    }
  }
  res.decode_seconds = std::chrono::duration<double>(Clock::now() - t2).count();
  for (const auto& lc : cache.layers) res.live_positions.push_back(lc.positions.size());

  // Maps also show the row of the final output token, which generation itself
  // never feeds back. That extra step uses a scratch counter.
  if (!res.maps.empty()) {
    const std::size_t position = n + res.output_ids.size() - 1;
    if (position < cfg.max_seq) {
      MacCounter scratch;
      DecodeOutput step = decode_step(ws, cfg, cache, res.output_ids.back(), position, scratch, true);
      scatter_maps(step.attention, position);
    }
    const std::size_t L = n + res.output_ids.size();
    for (auto& [l, m] : res.maps) {
      DenseMatrix trimmed(L, L);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) trimmed(i, j) = m(i, j);
      m = std::move(trimmed);
    }
  }

  return res;
}

}  // namespace fastv
