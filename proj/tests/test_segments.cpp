#include <gtest/gtest.h>

#include <filesystem>

#include "fastv/segments.hpp"

namespace fastv {
namespace {

SegmentedSequence example80() {
  SequenceSpec s;
  s.sys_ids.assign(4, 1);
  s.img_ids.assign(64, 40);
  s.ins_ids.assign(12, 2);
  return build_sequence(s, 64);
}

TEST(Segments, BuildFromSpans) {
  auto seq = example80();
  EXPECT_EQ(seq.n_input(), 80u);
  EXPECT_EQ(seq.count(SegmentKind::Img), 64u);
  EXPECT_EQ(seq.span(SegmentKind::Ins).start, 68u);
}

TEST(Segments, EmptyImageSpanIsValid) {
  SequenceSpec s{{1, 2}, {}, {3}};
  auto seq = build_sequence(s, 10);
  EXPECT_EQ(seq.count(SegmentKind::Img), 0u);
  EXPECT_EQ(seq.n_input(), 3u);
}

TEST(Segments, OverlapIsRejectedWithBothSpans) {
  std::vector<TokenId> ids(10, 1);
  try {
    build_sequence({{SegmentKind::Sys, 0, 4}, {SegmentKind::Img, 3, 8}, {SegmentKind::Ins, 8, 10}}, ids, 64);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("sys[0,4)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("img[3,8)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("overlap"), std::string::npos) << msg;
  }
}

TEST(Segments, OutOfOrderAndEmptyTextSpansRejected) {
  std::vector<TokenId> ids(10, 1);
  EXPECT_THROW(build_sequence({{SegmentKind::Img, 0, 4}, {SegmentKind::Sys, 4, 8}, {SegmentKind::Ins, 8, 10}}, ids, 64),
               ConfigError);
  EXPECT_THROW(build_sequence(SequenceSpec{{}, {1}, {2}}, 64), ConfigError);
  EXPECT_THROW(build_sequence(SequenceSpec{{1}, {1}, {}}, 64), ConfigError);
}

TEST(Segments, IdOutOfVocabReportsIndex) {
  try {
    build_sequence(SequenceSpec{{1, 2}, {70}, {3}}, 64);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos) << e.what();
  }
}

TEST(Segments, SegmentOf) {
  auto seq = example80();
  EXPECT_EQ(segment_of(seq, 5, 80), SegmentKind::Img);
  EXPECT_EQ(segment_of(seq, 79, 80), SegmentKind::Ins);
  EXPECT_EQ(segment_of(seq, 80, 81), SegmentKind::Out);
  EXPECT_EQ(segment_of(seq, 0, 80), SegmentKind::Sys);
  EXPECT_THROW(segment_of(seq, 80, 80), ContractError);
}

TEST(Segments, EveryPositionInExactlyOneSpan) {
  auto seq = example80();
  std::size_t total = 0;
  for (const auto& s : seq.spans()) total += s.size();
  EXPECT_EQ(total, seq.n_input());
  for (std::size_t p = 0; p < seq.n_input(); ++p) {
    int hits = 0;
    for (const auto& s : seq.spans()) hits += s.contains(p);
    EXPECT_EQ(hits, 1) << p;
  }
}

TEST(Segments, SpecFileRoundTrip) {
  SequenceSpec s{{1, 2, 3}, {40, 41}, {5}};
  const auto path = std::filesystem::temp_directory_path() / "fastv_seq_roundtrip.json";
  save_sequence_spec(s, path);
  EXPECT_EQ(load_sequence_spec(path), s);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace fastv
