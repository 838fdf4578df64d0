#pragma once

// Attention statistics over generated tokens: per-step mass per token type,
// allocation (summed over a response) and efficiency (allocation divided by
// the type's token count), merged across samples; plus attention-map export.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastv/errors.hpp"
#include "fastv/model.hpp"
#include "fastv/segments.hpp"

namespace fastv {

using TypeMass = std::array<double, 4>;  // indexed by SegmentKind

inline constexpr double kRecordRowTolerance = 1e-3;

struct StepAttentionRecord {
  std::size_t step = 0;
  std::vector<std::vector<TypeMass>> alpha;  // [layer][head]
};

/// Routes each head's row mass into sys/img/ins/out by key position.
inline StepAttentionRecord record(const StepAttention& rows, const SegmentedSequence& seq,
                                  std::size_t step) {
  StepAttentionRecord rec;
  rec.step = step;
  rec.alpha.resize(rows.size());
  for (std::size_t l = 0; l < rows.size(); ++l) {
    const auto& la = rows[l];
    std::size_t total_len = seq.n_input();
    for (auto p : la.positions) total_len = std::max(total_len, p + 1);
    for (std::size_t h = 0; h < la.heads.size(); ++h) {
      const auto& row = la.heads[h];
      if (row.size() != la.positions.size()) {
        throw ContractError("record: row length does not match its position list");
      }
      TypeMass m{};
      double sum = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        m[static_cast<std::size_t>(segment_of(seq, la.positions[j], total_len))] += row[j];
        sum += row[j];
      }
      if (std::abs(sum - 1.0) > kRecordRowTolerance) {
        throw IntegrityError("attention row at step " + std::to_string(step) + ", layer " +
                             std::to_string(l + 1) + ", head " + std::to_string(h) + " sums to " +
                             std::to_string(sum));
      }
      rec.alpha[l].push_back(m);
    }
  }
  return rec;
}

// Statistics for one response (or the merge of several).
struct SampleStats {
  std::size_t n_samples = 1;
  std::size_t n_layers = 0;
  double n_out = 0.0;                // generated tokens (mean after merge)
  std::array<double, 4> counts{};    // token count per type; out == n_out
  std::vector<TypeMass> lambda;      // [layer]
  std::vector<std::array<std::optional<double>, 4>> epsilon;  // absent when the type is empty
};

/// Sum over steps of the head-mean type mass, per layer.
inline std::vector<TypeMass> allocation(const std::vector<StepAttentionRecord>& records) {
  if (records.empty()) throw ContractError("allocation: no recorded steps");
  const std::size_t layers = records.front().alpha.size();
  std::vector<TypeMass> lambda(layers, TypeMass{});
  for (const auto& r : records) {
    if (r.alpha.size() != layers) throw ContractError("allocation: layer count differs between steps");
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& heads = r.alpha[l];
      for (const auto& m : heads)
        for (std::size_t t = 0; t < 4; ++t) lambda[l][t] += m[t] / static_cast<double>(heads.size());
    }
  }
  return lambda;
}

inline SampleStats efficiency(const std::vector<StepAttentionRecord>& records,
                              const SegmentedSequence& seq) {
  SampleStats s;
  s.lambda = allocation(records);
  s.n_layers = s.lambda.size();
  s.n_out = static_cast<double>(records.size());
  s.counts = {static_cast<double>(seq.count(SegmentKind::Sys)),
              static_cast<double>(seq.count(SegmentKind::Img)),
              static_cast<double>(seq.count(SegmentKind::Ins)), s.n_out};
  s.epsilon.resize(s.n_layers);
  for (std::size_t l = 0; l < s.n_layers; ++l)
    for (std::size_t t = 0; t < 4; ++t)
      if (s.counts[t] > 0) s.epsilon[l][t] = s.lambda[l][t] / s.counts[t];
  return s;
}

/// Convenience: records every step of a generation made with record_attention.
inline SampleStats profile_generation(const GenerationResult& gen, const SegmentedSequence& seq) {
  std::vector<StepAttentionRecord> recs;
  recs.reserve(gen.attention.size());
  for (std::size_t i = 0; i < gen.attention.size(); ++i) recs.push_back(record(gen.attention[i], seq, i));
  return efficiency(recs, seq);
}

/// Macro-average across samples in input order. Epsilon entries are averaged
/// over the samples where they are defined.
inline SampleStats merge(const std::vector<SampleStats>& samples) {
  if (samples.empty()) throw ContractError("merge: no samples");
  SampleStats out;
  out.n_layers = samples.front().n_layers;
  out.n_samples = 0;
  out.lambda.assign(out.n_layers, TypeMass{});
  out.epsilon.assign(out.n_layers, {});
  std::vector<std::array<std::size_t, 4>> eps_n(out.n_layers, std::array<std::size_t, 4>{});
  std::vector<std::array<double, 4>> eps_sum(out.n_layers, std::array<double, 4>{});
  double weight_total = 0.0;
  for (const auto& s : samples) {
    if (s.n_layers != out.n_layers) {
      throw ConfigError("merge: layer count " + std::to_string(s.n_layers) + " != " +
                        std::to_string(out.n_layers));
    }
    // A previously merged entry counts as its n_samples constituents.
    const double w = static_cast<double>(s.n_samples);
    weight_total += w;
    out.n_samples += s.n_samples;
    out.n_out += w * s.n_out;
    for (std::size_t t = 0; t < 4; ++t) out.counts[t] += w * s.counts[t];
    for (std::size_t l = 0; l < out.n_layers; ++l)
      for (std::size_t t = 0; t < 4; ++t) {
        out.lambda[l][t] += w * s.lambda[l][t];
        if (s.epsilon[l][t]) {
          eps_sum[l][t] += w * *s.epsilon[l][t];
          eps_n[l][t] += s.n_samples;
        }
      }
  }
  out.n_out /= weight_total;
  for (auto& c : out.counts) c /= weight_total;
  for (std::size_t l = 0; l < out.n_layers; ++l)
    for (std::size_t t = 0; t < 4; ++t) {
      out.lambda[l][t] /= weight_total;
      if (eps_n[l][t] > 0) out.epsilon[l][t] = eps_sum[l][t] / static_cast<double>(eps_n[l][t]);
    }
  return out;
}

inline nlohmann::json stats_to_json(const SampleStats& s) {
  nlohmann::json j;
  j["n_samples"] = s.n_samples;
  j["n_layers"] = s.n_layers;
  j["n_out"] = s.n_out;
  nlohmann::json counts, lambda, epsilon;
  for (SegmentKind k : kAllSegmentKinds) {
    const auto t = static_cast<std::size_t>(k);
    const std::string name(to_string(k));
    counts[name] = s.counts[t];
    std::vector<double> lam;
    std::vector<double> eps;
    bool defined = true;
    for (std::size_t l = 0; l < s.n_layers; ++l) {
      lam.push_back(s.lambda[l][t]);
      if (s.epsilon[l][t]) {
        eps.push_back(*s.epsilon[l][t]);
      } else {
        defined = false;
      }
    }
    lambda[name] = lam;
    if (defined) epsilon[name] = eps;
  }
  j["counts"] = counts;
  j["lambda"] = lambda;
  j["epsilon"] = epsilon;
  return j;
}

// Head-averaged L x L attention for selected layers (1-based), zero where a
// query cannot see a key or where a row was pruned away.
struct AttentionMapDump {
  std::vector<std::size_t> layers;
  std::vector<DenseMatrix> maps;  // parallel to layers
  SegmentedSequence seq;
  std::size_t total_length = 0;
  std::vector<std::size_t> dropped;
};

inline AttentionMapDump make_map_dump(const GenerationResult& gen, const SegmentedSequence& seq) {
  AttentionMapDump dump;
  dump.seq = seq;
  for (const auto& [l, m] : gen.maps) {
    dump.layers.push_back(l);
    dump.maps.push_back(m);
    dump.total_length = m.rows();
  }
  if (gen.decision) dump.dropped = gen.decision->dropped;
  return dump;
}

inline std::string format_csv_matrix(const DenseMatrix& m) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(m(r, c)));
      if (c) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline DenseMatrix parse_csv_matrix(const std::string& text) {
  DenseMatrix m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<float> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw ParseError("csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (!m.empty() && row.size() != m.cols()) {
      throw ParseError("csv line " + std::to_string(line_no) + ": ragged row");
    }
    m.append_row(row);
  }
  return m;
}

/// Writes layer_<j>.csv per selected layer and maps_meta.json into `dir`.
inline void export_maps(const AttentionMapDump& dump, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create map directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < dump.layers.size(); ++i) {
    const auto path = dir / ("layer_" + std::to_string(dump.layers[i]) + ".csv");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << format_csv_matrix(dump.maps[i]);
  }
  nlohmann::json meta;
  meta["layers"] = dump.layers;
  meta["total_length"] = dump.total_length;
  meta["n_input"] = dump.seq.n_input();
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : dump.seq.spans())
    spans.push_back({{"kind", std::string(to_string(s.kind))}, {"start", s.start}, {"end", s.end}});
  spans.push_back({{"kind", "out"}, {"start", dump.seq.n_input()}, {"end", dump.total_length}});
  meta["spans"] = spans;
  meta["dropped"] = dump.dropped;
  const auto path = dir / "maps_meta.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << meta.dump(2) << '\n';
}

}  // namespace fastv
