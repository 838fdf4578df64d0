#pragma once

// Four-part input layout: system prompt, image tokens, user instruction, and
// the generated output that follows them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastv/errors.hpp"

namespace fastv {

using TokenId = std::uint32_t;

enum class SegmentKind : std::uint8_t { Sys = 0, Img = 1, Ins = 2, Out = 3 };

inline constexpr std::array<SegmentKind, 4> kAllSegmentKinds = {
    SegmentKind::Sys, SegmentKind::Img, SegmentKind::Ins, SegmentKind::Out};

inline constexpr std::string_view to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::Sys: return "sys";
    case SegmentKind::Img: return "img";
    case SegmentKind::Ins: return "ins";
    case SegmentKind::Out: return "out";
  }
  return "?";
}

inline SegmentKind parse_segment_kind(std::string_view s) {
  for (SegmentKind k : kAllSegmentKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown segment kind '" + std::string(s) + "' (expected sys|img|ins|out)");
}

// Half-open [start, end).
struct Span {
  SegmentKind kind;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - start; }
  bool contains(std::size_t p) const noexcept { return p >= start && p < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

class SegmentedSequence {
 public:
  const std::vector<TokenId>& token_ids() const noexcept { return ids_; }
  const std::array<Span, 3>& spans() const noexcept { return spans_; }
  std::size_t n_input() const noexcept { return ids_.size(); }

  const Span& span(SegmentKind k) const {
    if (k == SegmentKind::Out) throw ContractError("SegmentedSequence::span: Out has no input span");
    return spans_[static_cast<std::size_t>(k)];
  }
  std::size_t count(SegmentKind k) const { return span(k).size(); }

 private:
  friend SegmentedSequence build_sequence(std::vector<Span>, std::vector<TokenId>, std::size_t);
  std::vector<TokenId> ids_;
  std::array<Span, 3> spans_{};
};

/// Validates spans (contiguous Sys, Img, Ins covering [0, n)) and ids (< vocab).
inline SegmentedSequence build_sequence(std::vector<Span> spans, std::vector<TokenId> ids,
                                        std::size_t vocab) {
  auto describe = [](const Span& s) {
    return std::string(to_string(s.kind)) + "[" + std::to_string(s.start) + "," +
           std::to_string(s.end) + ")";
  };
  if (spans.size() != 3) {
    throw ConfigError("sequence needs exactly three input spans (sys, img, ins), got " +
                      std::to_string(spans.size()));
  }
  constexpr std::array<SegmentKind, 3> order = {SegmentKind::Sys, SegmentKind::Img,
                                                SegmentKind::Ins};
  for (std::size_t i = 0; i < 3; ++i) {
    if (spans[i].kind != order[i]) {
      throw ConfigError("span " + describe(spans[i]) + " out of order; expected " +
                        std::string(to_string(order[i])) + " at slot " + std::to_string(i));
    }
    if (spans[i].end < spans[i].start) throw ConfigError("span " + describe(spans[i]) + " is inverted");
  }
  if (spans[0].start != 0) throw ConfigError("span " + describe(spans[0]) + " does not start at 0");
  for (std::size_t i = 0; i + 1 < 3; ++i) {
    if (spans[i].end != spans[i + 1].start) {
      throw ConfigError("spans " + describe(spans[i]) + " and " + describe(spans[i + 1]) +
                        (spans[i].end > spans[i + 1].start ? " overlap" : " leave a gap"));
    }
  }
  if (spans[0].size() == 0) throw ConfigError("sys span must be non-empty");
  if (spans[2].size() == 0) throw ConfigError("ins span must be non-empty");
  if (spans[2].end != ids.size()) {
    throw ConfigError("spans cover [0," + std::to_string(spans[2].end) + ") but there are " +
                      std::to_string(ids.size()) + " token ids");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ConfigError("token id " + std::to_string(ids[i]) + " at index " + std::to_string(i) +
                        " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  SegmentedSequence seq;
  seq.ids_ = std::move(ids);
  for (std::size_t i = 0; i < 3; ++i) seq.spans_[i] = spans[i];
  return seq;
}

/// The on-disk form: three id arrays in fixed order.
struct SequenceSpec {
  std::vector<TokenId> sys_ids;
  std::vector<TokenId> img_ids;
  std::vector<TokenId> ins_ids;
  friend bool operator==(const SequenceSpec&, const SequenceSpec&) = default;
};

inline SegmentedSequence build_sequence(const SequenceSpec& spec, std::size_t vocab) {
  const std::size_t a = spec.sys_ids.size();
  const std::size_t b = a + spec.img_ids.size();
  const std::size_t c = b + spec.ins_ids.size();
  std::vector<TokenId> ids;
  ids.reserve(c);
  ids.insert(ids.end(), spec.sys_ids.begin(), spec.sys_ids.end());
  ids.insert(ids.end(), spec.img_ids.begin(), spec.img_ids.end());
  ids.insert(ids.end(), spec.ins_ids.begin(), spec.ins_ids.end());
  return build_sequence({{SegmentKind::Sys, 0, a}, {SegmentKind::Img, a, b}, {SegmentKind::Ins, b, c}},
                        std::move(ids), vocab);
}

/// Kind of the segment holding `index`; positions at or past n_input are Out.
/// `total_length` is the input length plus tokens generated so far.
inline SegmentKind segment_of(const SegmentedSequence& seq, std::size_t index,
                              std::size_t total_length) {
  if (index >= total_length) {
    throw ContractError("segment_of: index " + std::to_string(index) + " >= length " +
                        std::to_string(total_length));
  }
  if (index >= seq.n_input()) return SegmentKind::Out;
  for (const Span& s : seq.spans())
    if (s.contains(index)) return s.kind;
  throw ContractError("segment_of: index not covered");  // unreachable for validated sequences
}

inline void to_json(nlohmann::json& j, const SequenceSpec& s) {
  j = nlohmann::json{{"sys_ids", s.sys_ids}, {"img_ids", s.img_ids}, {"ins_ids", s.ins_ids}};
}

inline void from_json(const nlohmann::json& j, SequenceSpec& s) {
  try {
    j.at("sys_ids").get_to(s.sys_ids);
    j.at("img_ids").get_to(s.img_ids);
    j.at("ins_ids").get_to(s.ins_ids);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sequence spec: ") + e.what());
  }
}

inline SequenceSpec load_sequence_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sequence spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what() + " (byte " + std::to_string(e.byte) + ")");
  }
  return j.get<SequenceSpec>();
}

inline void save_sequence_spec(const SequenceSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(spec).dump() << '\n';
}

}  // namespace fastv
