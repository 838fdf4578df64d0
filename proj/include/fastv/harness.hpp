#pragma once

// Experiment plumbing shared by the CLI and the tests: synthetic workloads,
// run result documents, and the latency benchmark.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastv/model.hpp"
#include "fastv/pruning.hpp"
#include "fastv/segments.hpp"
#include "fastv/weights.hpp"

namespace fastv {

inline constexpr TokenId kDefaultEosId = 0;

struct WorkloadParams {
  std::uint64_t seed = 0;
  std::size_t n_sys = 4;
  std::size_t n_img = 64;
  std::size_t n_ins = 12;
  std::size_t count = 1;
};

// Id ranges: 0 is reserved (EOS), text ids are drawn from [1, vocab/2) and
// image ids from [vocab/2, vocab). One mt19937_64 stream seeded with `seed`
// fills the sequences in order: sys, img, ins, then the next sequence.
inline std::vector<SequenceSpec> gen_workload(const WorkloadParams& p, const ModelConfig& cfg) {
  cfg.validate();
  if (p.count == 0) throw ConfigError("gen: count must be >= 1");
  if (p.n_sys == 0 || p.n_ins == 0) throw ConfigError("gen: n_sys and n_ins must be >= 1");
  if (p.n_sys + p.n_img + p.n_ins > cfg.max_seq) {
    throw ConfigError("gen: sequence length " + std::to_string(p.n_sys + p.n_img + p.n_ins) +
                      " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  if (cfg.vocab < 4) throw ConfigError("gen: vocab must be >= 4 to hold text and image id ranges");
  const std::uint64_t half = cfg.vocab / 2;
  std::mt19937_64 rng(p.seed);
  auto draw = [&](std::uint64_t lo, std::uint64_t hi) {
    return static_cast<TokenId>(lo + detail::bounded(rng, hi - lo));
  };
  std::vector<SequenceSpec> out(p.count);
  for (auto& s : out) {
    for (std::size_t i = 0; i < p.n_sys; ++i) s.sys_ids.push_back(draw(1, half));
    for (std::size_t i = 0; i < p.n_img; ++i) s.img_ids.push_back(draw(half, cfg.vocab));
    for (std::size_t i = 0; i < p.n_ins; ++i) s.ins_ids.push_back(draw(1, half));
  }
  return out;
}

inline nlohmann::json counter_to_json(const MacCounter& c) {
  nlohmann::json scopes = nlohmann::json::object();
  for (const auto& [k, v] : c.per_scope()) scopes[k] = v;
  return {{"total", c.total()}, {"scopes", scopes}};
}

inline nlohmann::json decision_to_json(const std::optional<PruneDecision>& d) {
  if (!d) return nullptr;
  return {{"kept_count", d->kept.size()},
          {"dropped", d->dropped},
          {"candidates",
           {{"kind", std::string(to_string(d->candidates.kind))},
            {"start", d->candidates.start},
            {"end", d->candidates.end}}}};
}

/// Result document for one input. Only the "timing" object varies between
/// identical runs.
inline nlohmann::json run_result_json(const std::string& input_name, const GenerateOptions& opts,
                                      const GenerationResult& g) {
  nlohmann::json j;
  j["input"] = input_name;
  j["prune"] = opts.prune ? nlohmann::json(to_string(*opts.prune)) : nlohmann::json(nullptr);
  j["streaming"] = opts.streaming ? nlohmann::json(to_string(*opts.streaming)) : nlohmann::json(nullptr);
  j["max_new_tokens"] = opts.max_new_tokens;
  j["eos_id"] = opts.eos_id;
  j["output_ids"] = g.output_ids;
  j["stop"] = std::string(to_string(g.stop));
  j["decision"] = decision_to_json(g.decision);
  j["live_positions"] = g.live_positions;
  j["macs"] = counter_to_json(g.counter);
  j["macs"]["prefill"] = g.prefill_macs;
  j["timing"] = {{"prefill_ms", g.prefill_seconds * 1e3}, {"decode_ms", g.decode_seconds * 1e3}};
  return j;
}

struct BenchVariant {
  std::string name;
  std::optional<PruneConfig> prune;
  std::optional<StreamingMask> streaming;
};

struct VariantStats {
  std::string name;
  std::vector<double> total_seconds;  // one per measured repeat, summed over inputs
  std::vector<double> prefill_seconds;
  std::vector<double> decode_seconds;
  double median_total = 0, min_total = 0;
  double median_prefill = 0, min_prefill = 0;
  double median_decode = 0, min_decode = 0;
  double median_latency_per_example = 0;
  std::uint64_t macs_total = 0;
  std::uint64_t macs_prefill = 0;
  std::vector<std::size_t> peak_live_positions;  // per layer, max over inputs
  std::vector<std::vector<TokenId>> output_ids;  // per input
};

struct BenchReport {
  std::size_t repeat = 0;
  std::size_t warmup = 0;
  std::size_t inputs = 0;
  std::vector<VariantStats> variants;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Runs every variant on the same inputs. Each round runs all variants in
/// order; the first `warmup` rounds are discarded.
inline BenchReport run_bench(const WeightSet& ws, const ModelConfig& cfg,
                             const std::vector<SegmentedSequence>& inputs,
                             const std::vector<BenchVariant>& variants, std::size_t repeat,
                             std::size_t max_new_tokens, TokenId eos_id = kDefaultEosId,
                             std::size_t warmup = 1) {
  using Clock = std::chrono::steady_clock;
  if (repeat < 3) throw ConfigError("bench: repeat must be >= 3");
  if (inputs.empty()) throw ConfigError("bench: no inputs");
  BenchReport rep;
  rep.repeat = repeat;
  rep.warmup = warmup;
  rep.inputs = inputs.size();
  for (const auto& v : variants) {
    VariantStats s;
    s.name = v.name;
    rep.variants.push_back(std::move(s));
  }

  for (std::size_t round = 0; round < warmup + repeat; ++round) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      GenerateOptions go;
      go.prune = variants[vi].prune;
      go.streaming = variants[vi].streaming;
      go.max_new_tokens = max_new_tokens;
      go.eos_id = eos_id;
      double total = 0, pre = 0, dec = 0;
      std::uint64_t macs = 0, macs_pre = 0;
      std::vector<std::size_t> peak(cfg.layers, 0);
      std::vector<std::vector<TokenId>> ids;
      for (const auto& seq : inputs) {
        const auto t0 = Clock::now();
        GenerationResult g = generate_greedy(ws, cfg, seq, go);
        total += std::chrono::duration<double>(Clock::now() - t0).count();
        pre += g.prefill_seconds;
        dec += g.decode_seconds;
        macs += g.counter.total();
        macs_pre += g.prefill_macs;
        for (std::size_t l = 0; l < cfg.layers; ++l) peak[l] = std::max(peak[l], g.live_positions[l]);
        ids.push_back(std::move(g.output_ids));
      }
      auto& s = rep.variants[vi];
      if (round == 0) {
        s.macs_total = macs;
        s.macs_prefill = macs_pre;
        s.peak_live_positions = peak;
        s.output_ids = std::move(ids);
      } else if (macs != s.macs_total || ids != s.output_ids) {
        throw IntegrityError("bench: variant '" + s.name + "' did different work across rounds");
      }
      if (round >= warmup) {
        s.total_seconds.push_back(total);
        s.prefill_seconds.push_back(pre);
        s.decode_seconds.push_back(dec);
      }
    }
  }
  for (auto& s : rep.variants) {
    s.median_total = median(s.total_seconds);
    s.min_total = *std::min_element(s.total_seconds.begin(), s.total_seconds.end());
    s.median_prefill = median(s.prefill_seconds);
    s.min_prefill = *std::min_element(s.prefill_seconds.begin(), s.prefill_seconds.end());
    s.median_decode = median(s.decode_seconds);
    s.min_decode = *std::min_element(s.decode_seconds.begin(), s.decode_seconds.end());
    s.median_latency_per_example = s.median_total / static_cast<double>(inputs.size());
  }
  return rep;
}

inline nlohmann::json bench_to_json(const BenchReport& r) {
  nlohmann::json j;
  j["repeat"] = r.repeat;
  j["warmup"] = r.warmup;
  j["inputs"] = r.inputs;
  j["variants"] = nlohmann::json::array();
  for (const auto& s : r.variants) {
    j["variants"].push_back({{"name", s.name},
                             {"median_total_s", s.median_total},
                             {"min_total_s", s.min_total},
                             {"median_prefill_s", s.median_prefill},
                             {"min_prefill_s", s.min_prefill},
                             {"median_decode_s", s.median_decode},
                             {"min_decode_s", s.min_decode},
                             {"median_latency_per_example_s", s.median_latency_per_example},
                             {"total_s", s.total_seconds},
                             {"macs_total", s.macs_total},
                             {"macs_prefill", s.macs_prefill},
                             {"peak_live_positions", s.peak_live_positions}});
  }
  return j;
}

}  // namespace fastv
