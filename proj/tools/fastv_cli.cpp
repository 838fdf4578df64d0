// fastv: command-line front end.
//
//   fastv gen     --config C --seed N --out DIR [--n-sys --n-img --n-ins --count] [--weights-out F]
//   fastv run     --config C (--weights F | --seed N) --input F... --out DIR [--fastv ... | --streaming ...]
//   fastv profile --config C (--weights F | --seed N) --input F... --out STATS.json [--maps DIR]
//   fastv flops   --n --n-img --d --m --layers --mode --grid-k A..B --grid-r A..B:STEP --out F.csv
//   fastv bench   --config C (--weights F | --seed N) --input F... --fastv V... --repeat N --out F.json
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/integrity error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fastv/fastv.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct ModelArgs {
  std::string config;
  std::string weights;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::string fastv;
  std::string streaming;
  std::size_t max_new_tokens = 16;
  fastv::TokenId eos_id = fastv::kDefaultEosId;
  std::string out;
};

void add_model_flags(CLI::App* cmd, ModelArgs& a, bool with_prune) {
  cmd->add_option("--config", a.config, "model config JSON")->required();
  cmd->add_option("--weights", a.weights, "FVW1 weight file");
  cmd->add_option("--seed", a.seed, "synthesize weights from this seed");
  cmd->add_option("--input", a.inputs, "sequence spec JSON files")->required();
  if (with_prune) {
    cmd->add_option("--fastv", a.fastv, "K=<int>,R=<int>,criterion=<attn|random:SEED|segment:KIND:STRATEGY>");
    cmd->add_option("--streaming", a.streaming, "S=<int>,W=<int> sink+window attention baseline");
  }
  cmd->add_option("--max-new-tokens", a.max_new_tokens, "generation cap")->check(CLI::PositiveNumber);
  cmd->add_option("--eos-id", a.eos_id, "end-of-sequence token id");
  cmd->add_option("--out", a.out, "output path")->required();
}

struct Loaded {
  fastv::ModelConfig cfg;
  fastv::WeightSet ws;
  std::vector<fastv::SegmentedSequence> seqs;
};

Loaded load(const ModelArgs& a) {
  Loaded l;
  l.cfg = fastv::load_model_config(a.config);
  if (!a.weights.empty() == a.seed.has_value()) {
    throw fastv::ConfigError("give exactly one of --weights PATH or --seed N");
  }
  l.ws = a.seed ? fastv::synth_weights(l.cfg, *a.seed) : fastv::load_weights(a.weights, l.cfg);
  for (const auto& in : a.inputs) l.seqs.push_back(fastv::build_sequence(fastv::load_sequence_spec(in), l.cfg.vocab));
  return l;
}

fastv::GenerateOptions generate_options(const ModelArgs& a, const Loaded& l) {
  fastv::GenerateOptions go;
  go.max_new_tokens = a.max_new_tokens;
  go.eos_id = a.eos_id;
  if (!a.fastv.empty() && !a.streaming.empty()) {
    throw fastv::ConfigError("--fastv and --streaming are mutually exclusive");
  }
  if (!a.fastv.empty()) {
    go.prune = fastv::parse_prune_config(a.fastv);
    go.prune->validate(l.cfg.layers);
  }
  if (!a.streaming.empty()) {
    go.streaming = fastv::parse_streaming_mask(a.streaming);
    for (std::size_t i = 0; i < l.seqs.size(); ++i) {
      if (go.streaming->degenerate(l.seqs[i].n_input())) {
        std::cerr << "warning: --streaming " << a.streaming << " covers all " << l.seqs[i].n_input()
                  << " tokens of " << a.inputs[i] << "; equivalent to full causal attention\n";
      }
    }
  }
  return go;
}

// One generation per worker; results land in input order.
template <typename Fn>
auto parallel_map(std::size_t n, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          slots[i].emplace(fn(i));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_run(const ModelArgs& a) {
  const Loaded l = load(a);
  const auto go = generate_options(a, l);
  auto results = parallel_map(l.seqs.size(), [&](std::size_t i) {
    return fastv::run_result_json(fs::path(a.inputs[i]).filename().string(), go,
                                  fastv::generate_greedy(l.ws, l.cfg, l.seqs[i], go));
  });
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto path = fs::path(a.out) / (fs::path(a.inputs[i]).stem().string() + ".result.json");
    write_file(path, results[i].dump(2) + "\n");
  }
  return 0;
}

int cmd_profile(const ModelArgs& a, const std::string& maps_dir, std::size_t maps_input,
                std::vector<std::size_t> maps_layers) {
  const Loaded l = load(a);
  auto go = generate_options(a, l);
  go.record_attention = true;
  if (!maps_dir.empty()) {
    if (maps_input >= l.seqs.size()) throw fastv::ConfigError("--maps-input out of range");
    if (maps_layers.empty())
      for (std::size_t j = 1; j <= l.cfg.layers; ++j) maps_layers.push_back(j);
    for (auto j : maps_layers)
      if (j < 1 || j > l.cfg.layers) throw fastv::ConfigError("--maps-layers: layer " + std::to_string(j) + " out of range");
  }
  auto stats = parallel_map(l.seqs.size(), [&](std::size_t i) {
    auto opts = go;
    if (!maps_dir.empty() && i == maps_input) opts.map_layers = maps_layers;
    auto g = fastv::generate_greedy(l.ws, l.cfg, l.seqs[i], opts);
    if (!opts.map_layers.empty()) fastv::export_maps(fastv::make_map_dump(g, l.seqs[i]), maps_dir);
    return fastv::profile_generation(g, l.seqs[i]);
  });
  auto doc = fastv::stats_to_json(fastv::merge(stats));
  doc["prune"] = go.prune ? nlohmann::json(fastv::to_string(*go.prune)) : nlohmann::json(nullptr);
  doc["streaming"] = go.streaming ? nlohmann::json(fastv::to_string(*go.streaming)) : nlohmann::json(nullptr);
  write_file(a.out, doc.dump(2) + "\n");
  return 0;
}

int cmd_bench(const ModelArgs& a, const std::vector<std::string>& variants, std::size_t repeat,
              std::size_t warmup) {
  const Loaded l = load(a);
  std::vector<fastv::BenchVariant> vs{{"baseline", std::nullopt, std::nullopt}};
  for (const auto& v : variants) {
    auto p = fastv::parse_prune_config(v);
    p.validate(l.cfg.layers);
    vs.push_back({"fastv " + fastv::to_string(p), p, std::nullopt});
  }
  if (!a.streaming.empty()) {
    vs.push_back({"streaming " + a.streaming, std::nullopt, fastv::parse_streaming_mask(a.streaming)});
  }
  const auto rep = fastv::run_bench(l.ws, l.cfg, l.seqs, vs, repeat, a.max_new_tokens, a.eos_id, warmup);
  write_file(a.out, fastv::bench_to_json(rep).dump(2) + "\n");
  const double base = rep.variants.front().median_total;
  for (const auto& s : rep.variants) {
    std::fprintf(stderr, "%-40s median %.3fs  min %.3fs  prefill %.3fs  decode %.3fs  (%.1f%% of baseline)\n",
                 s.name.c_str(), s.median_total, s.min_total, s.median_prefill, s.median_decode,
                 base > 0 ? 100.0 * s.median_total / base : 0.0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FastV inference lab: visual token pruning, attention profiling, FLOPs model"};
  app.require_subcommand(1);

  ModelArgs run_args;
  auto* run = app.add_subcommand("run", "generate with optional pruning, write one result per input");
  add_model_flags(run, run_args, true);

  ModelArgs prof_args;
  std::string maps_dir;
  std::size_t maps_input = 0;
  std::vector<std::size_t> maps_layers;
  auto* prof = app.add_subcommand("profile", "attention allocation/efficiency statistics");
  add_model_flags(prof, prof_args, true);
  prof->add_option("--maps", maps_dir, "directory for layer_<j>.csv attention maps");
  prof->add_option("--maps-input", maps_input, "index of the input whose maps are exported");
  prof->add_option("--maps-layers", maps_layers, "1-based layers to export (default all)")->delimiter(',');

  ModelArgs bench_args;
  std::vector<std::string> bench_variants;
  std::size_t repeat = 5, warmup = 1;
  auto* bench = app.add_subcommand("bench", "median latency of baseline vs FastV variants");
  add_model_flags(bench, bench_args, false);
  bench->add_option("--fastv", bench_variants, "a FastV variant (repeatable)");
  bench->add_option("--streaming", bench_args.streaming, "add a streaming-mask variant S=<int>,W=<int>");
  bench->add_option("--repeat", repeat, "measured rounds (>= 3)");
  bench->add_option("--warmup", warmup, "discarded rounds");

  fastv::CostParams cost;
  std::string mode = "eq5", grid_k, grid_r = "0..100:5", flops_out;
  std::uint64_t n_text = 0;
  auto* flops = app.add_subcommand("flops", "analytic FLOPs reduction grid (CSV)");
  flops->add_option("--n", cost.n, "total input tokens (or use --n-text)");
  flops->add_option("--n-text", n_text, "text tokens; n = n_img + n_text when --n is absent");
  flops->add_option("--n-img", cost.n_img, "image tokens");
  flops->add_option("--d", cost.d, "hidden size")->required();
  flops->add_option("--m", cost.m, "FFN intermediate size")->required();
  flops->add_option("--layers", cost.T, "layer count T")->required();
  flops->add_option("--mode", mode, "eq5 | image-only");
  flops->add_option("--grid-k", grid_k, "K range A..B (default 0..T)");
  flops->add_option("--grid-r", grid_r, "R range A..B:STEP");
  flops->add_option("--out", flops_out, "CSV path")->required();

  fastv::WorkloadParams wp;
  std::string gen_config, gen_out, weights_out;
  auto* gen = app.add_subcommand("gen", "write deterministic synthetic sequence specs");
  gen->add_option("--config", gen_config, "model config JSON (vocab, max_seq)")->required();
  gen->add_option("--seed", wp.seed, "workload seed")->required();
  gen->add_option("--n-sys", wp.n_sys, "system-prompt tokens");
  gen->add_option("--n-img", wp.n_img, "image tokens");
  gen->add_option("--n-ins", wp.n_ins, "instruction tokens");
  gen->add_option("--count", wp.count, "number of sequences");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--weights-out", weights_out, "also write FVW1 weights synthesized from --seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*prof) return cmd_profile(prof_args, maps_dir, maps_input, maps_layers);
    if (*bench) return cmd_bench(bench_args, bench_variants, repeat, warmup);
    if (*flops) {
      cost.mode = fastv::parse_cost_mode(mode);
      if (cost.n == 0) cost.n = cost.n_img + n_text;
      const auto ks = fastv::parse_range(grid_k.empty() ? "0.." + std::to_string(cost.T) : grid_k);
      const auto rs = fastv::parse_range(grid_r);
      write_file(flops_out, fastv::grid_csv(fastv::grid(cost, ks, rs)));
      return 0;
    }
    if (*gen) {
      const auto cfg = fastv::load_model_config(gen_config);
      const auto specs = fastv::gen_workload(wp, cfg);
      fs::create_directories(gen_out);
      for (std::size_t i = 0; i < specs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "seq_%03zu.json", i);
        fastv::save_sequence_spec(specs[i], fs::path(gen_out) / name);
      }
      if (!weights_out.empty()) fastv::save_weights(fastv::synth_weights(cfg, wp.seed), weights_out);
      return 0;
    }
  } catch (const fastv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fastv::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
