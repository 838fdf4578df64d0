#pragma once

// Dense masked forward: the reference the pruning engine is checked against.
// Nothing is removed. In layers after K every query is barred (by a -inf
// score) from attending to dropped positions, and dropped rows never receive
// residual updates.

#include <span>
#include <vector>

#include "fastv/model.hpp"

namespace fastv {

/// Logits at the last non-dropped position of `ids`. Positions at or beyond
/// the decision's input length (generated tokens) are never dropped.
inline std::vector<float> masked_reference_forward(const WeightSet& ws, const ModelConfig& cfg,
                                                   std::span<const TokenId> ids,
                                                   const PruneDecision& decision, std::size_t K,
                                                   MacCounter& counter) {
  cfg.validate();
  const std::size_t n = ids.size();
  if (n == 0) throw ContractError("masked_reference_forward: empty input");
  if (K > cfg.layers) throw ConfigError("masked_reference_forward: K exceeds layer count");
  std::vector<bool> blocked(n, false);
  for (auto p : decision.dropped) {
    if (p >= n) throw ContractError("masked_reference_forward: dropped position out of range");
    blocked[p] = true;
  }

  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  DenseMatrix x = detail::embed(ws, ids, positions);
  const detail::MaskRule causal;
  detail::MaskRule masked;
  masked.blocked = &blocked;

  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    LayerCache scratch;
    const bool after_k = l > K;
    detail::layer_step(ws.layers[l - 1], cfg, l, x, positions, scratch, after_k ? masked : causal,
                       counter, {}, after_k ? &blocked : nullptr);
  }
  std::size_t last = n;
  while (last > 0 && blocked[last - 1]) --last;
  if (last == 0) throw ContractError("masked_reference_forward: every position dropped");
  return detail::project_logits(ws, x, last - 1, counter);
}

inline std::vector<float> masked_reference_forward(const WeightSet& ws, const ModelConfig& cfg,
                                                   const SegmentedSequence& seq,
                                                   const PruneDecision& decision, std::size_t K,
                                                   MacCounter& counter) {
  return masked_reference_forward(ws, cfg, seq.token_ids(), decision, K, counter);
}

/// Greedy generation where each step recomputes the masked forward over the
/// whole prefix. Quadratic, meant for equivalence checks only.
inline std::vector<TokenId> masked_reference_generate(const WeightSet& ws, const ModelConfig& cfg,
                                                      const SegmentedSequence& seq,
                                                      const PruneDecision& decision, std::size_t K,
                                                      std::size_t max_new_tokens, TokenId eos_id) {
  std::vector<TokenId> ids = seq.token_ids();
  std::vector<TokenId> out;
  MacCounter counter;
  while (out.size() < max_new_tokens && ids.size() <= cfg.max_seq) {
    const auto logits = masked_reference_forward(ws, cfg, ids, decision, K, counter);
    out.push_back(argmax(logits));
    if (out.back() == eos_id) break;
    ids.push_back(out.back());
  }
  return out;
}

}  // namespace fastv
