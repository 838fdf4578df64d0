#include <gtest/gtest.h>

#include <set>

#include "fastv/pruning.hpp"
#include "fastv/reference.hpp"
#include "test_util.hpp"

namespace fastv {
namespace {

using testing::make_sequence;
using testing::tiny_config;

TEST(Scoring, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + trial * 3;
    std::vector<DenseMatrix> heads;
    for (int h = 0; h < 3; ++h) heads.push_back(testing::random_causal_attention(n, rng));
    const Span span{SegmentKind::Img, 2, n - 2};
    auto got = score_received_attention(heads, span);
    auto want = testing::brute_force_scores(heads, span);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
  }
}

TEST(Scoring, ConservationPerHead) {
  std::mt19937_64 rng(2);
  const std::size_t n = 24;
  auto head = testing::random_causal_attention(n, rng);
  std::vector<DenseMatrix> one{head};
  auto s = score_received_attention(one, Span{SegmentKind::Img, 0, n});
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) total += double(n - p) * s[p];
  EXPECT_NEAR(total, double(n), 1e-4);
}

TEST(Scoring, EmptySpanGivesNoScores) {
  std::mt19937_64 rng(2);
  std::vector<DenseMatrix> heads{testing::random_causal_attention(4, rng)};
  EXPECT_TRUE(score_received_attention(heads, Span{SegmentKind::Img, 2, 2}).empty());
}

TEST(Select, DropsLowestWithHigherPositionFirstOnTies) {
  const std::vector<float> scores = {5, 1, 1, 9};
  const Span span{SegmentKind::Img, 4, 8};
  auto d = select_pruned(AttentionRank{}, scores, span, 50, 10);
  EXPECT_EQ(d.dropped, (std::vector<std::size_t>{5, 6}));
  EXPECT_EQ(d.kept, (std::vector<std::size_t>{0, 1, 2, 3, 4, 7, 8, 9}));

  d = select_pruned(AttentionRank{}, scores, span, 25, 10);
  EXPECT_EQ(d.dropped, (std::vector<std::size_t>{6}));
}

TEST(Select, DropCountsFollowFloor) {
  const std::size_t len = 64;
  std::vector<float> scores(len, 0.5f);
  const Span span{SegmentKind::Img, 4, 4 + len};
  for (int R : {0, 10, 33, 50, 90, 100}) {
    auto d = select_pruned(AttentionRank{}, scores, span, R, 80);
    EXPECT_EQ(d.dropped.size(), std::size_t(R) * len / 100) << R;
    EXPECT_EQ(d.kept.size() + d.dropped.size(), 80u);
  }
  EXPECT_EQ(drop_count(33, 10), 3u);
  EXPECT_EQ(drop_count(100, 0), 0u);
  EXPECT_THROW(drop_count(101, 10), ConfigError);
}

TEST(Select, MonotoneInR) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> scores(37);
  for (auto& s : scores) s = u(rng);
  const Span span{SegmentKind::Img, 3, 40};
  std::set<std::size_t> prev;
  for (int R = 0; R <= 100; ++R) {
    auto d = select_pruned(AttentionRank{}, scores, span, R, 45);
    std::set<std::size_t> cur(d.dropped.begin(), d.dropped.end());
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end())) << R;
    prev = cur;
  }
}

TEST(Select, RandomIsDeterministicPerSeedAndStaysInSpan) {
  const Span span{SegmentKind::Img, 4, 68};
  auto a = select_pruned(RandomDrop{7}, {}, span, 50, 80);
  auto b = select_pruned(RandomDrop{7}, {}, span, 50, 80);
  auto c = select_pruned(RandomDrop{8}, {}, span, 50, 80);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.dropped, c.dropped);
  EXPECT_EQ(a.dropped.size(), 32u);
  for (auto p : a.dropped) EXPECT_TRUE(span.contains(p));
}

TEST(Select, HeadFirstDropsLeadingPositions) {
  const Span span{SegmentKind::Sys, 0, 5};
  auto d = select_pruned(SegmentTarget{SegmentKind::Sys, TargetStrategy::HeadFirst}, {}, span, 50, 9);
  EXPECT_EQ(d.dropped, (std::vector<std::size_t>{0, 1}));
}

TEST(Select, WrongScoreCountIsContractError) {
  std::vector<float> scores(3, 1.0f);
  EXPECT_THROW(select_pruned(AttentionRank{}, scores, Span{SegmentKind::Img, 0, 4}, 50, 4), ContractError);
}

TEST(Config, ParseAndValidate) {
  auto p = parse_prune_config("K=3,R=75,criterion=random:42");
  EXPECT_EQ(p.K, 3u);
  EXPECT_EQ(p.R, 75);
  EXPECT_EQ(std::get<RandomDrop>(p.criterion).seed, 42u);
  EXPECT_EQ(to_string(p), "K=3,R=75,criterion=random:42");

  auto s = parse_prune_config("K=1,R=50,criterion=segment:ins:head-first");
  EXPECT_EQ(to_string(s), "K=1,R=50,criterion=segment:ins:head-first");

  EXPECT_THROW(parse_prune_config("K=1,R=150"), ConfigError);
  EXPECT_THROW(parse_prune_config("K=1,R=50,criterion=bogus"), ConfigError);
  EXPECT_THROW(parse_prune_config("K=x"), ConfigError);
  EXPECT_THROW((PruneConfig{0, 50, AttentionRank{}}.validate(4)), ConfigError);
  EXPECT_THROW((PruneConfig{0, 50, SegmentTarget{SegmentKind::Img, TargetStrategy::LowestAttention}}.validate(4)),
               ConfigError);
  EXPECT_NO_THROW((PruneConfig{0, 50, SegmentTarget{SegmentKind::Img, TargetStrategy::HeadFirst}}.validate(4)));
  EXPECT_THROW((PruneConfig{5, 50, AttentionRank{}}.validate(4)), ConfigError);
  EXPECT_THROW((PruneConfig{1, 50, SegmentTarget{SegmentKind::Out, TargetStrategy::HeadFirst}}.validate(4)),
               ConfigError);
}

TEST(StreamingMaskTest, AllowedSetMatchesDirectConstruction) {
  const StreamingMask m{4, 8};
  std::set<std::size_t> got;
  for (std::size_t k = 0; k < 32; ++k)
    if (m.allows(20, k)) got.insert(k);
  std::set<std::size_t> want = {0, 1, 2, 3};
  for (std::size_t k = 13; k <= 20; ++k) want.insert(k);
  EXPECT_EQ(got, want);
  EXPECT_FALSE(m.degenerate(32));
  EXPECT_TRUE((StreamingMask{30, 2}.degenerate(32)));
  EXPECT_EQ(parse_streaming_mask("S=4,W=8"), m);
  EXPECT_THROW(parse_streaming_mask("S=4"), ConfigError);
  EXPECT_THROW(parse_streaming_mask("S=4,W=0"), ConfigError);
}

TEST(MaskedReference, EmptyDropIsBitwiseBaseline) {
  auto cfg = tiny_config(3, 16, 2);
  auto ws = synth_weights(cfg, 13);
  auto seq = make_sequence(cfg, 1, 2, 10, 2);
  MacCounter c;
  auto base = prefill(ws, cfg, seq, {}, c);
  auto ref = masked_reference_forward(ws, cfg, seq, PruneDecision::keep_all(seq.n_input()), 1, c);
  EXPECT_EQ(ref, base.logits);
}

TEST(MaskedReference, EquivalentToRemovalAcrossSettings) {
  auto cfg = tiny_config(5, 16, 4);
  auto ws = synth_weights(cfg, 14);
  auto seq = make_sequence(cfg, 2, 3, 30, 5);
  for (std::size_t K : {1u, 2u, 4u, 5u})
    for (int R : {25, 50, 100})
      for (PruneCriterion crit : {PruneCriterion{AttentionRank{}}, PruneCriterion{RandomDrop{9}}}) {
        ForwardOptions o;
        o.prune = PruneConfig{K, R, crit};
        MacCounter c;
        auto pre = prefill(ws, cfg, seq, o, c);
        auto ref = masked_reference_forward(ws, cfg, seq, *pre.decision, K, c);
        EXPECT_LT(testing::max_relative_error(pre.logits, ref), 1e-4) << to_string(*o.prune);
      }
}

TEST(MaskedReference, AllImageDroppedAtSecondToLastLayer) {
  auto cfg = tiny_config(4, 16, 2);
  auto ws = synth_weights(cfg, 15);
  auto seq = make_sequence(cfg, 3, 3, 16, 3);
  ForwardOptions o;
  o.prune = PruneConfig{cfg.layers - 1, 100, AttentionRank{}};
  MacCounter c;
  auto pre = prefill(ws, cfg, seq, o, c);
  EXPECT_EQ(pre.decision->dropped.size(), 16u);
  auto ref = masked_reference_forward(ws, cfg, seq, *pre.decision, cfg.layers - 1, c);
  EXPECT_LT(testing::max_relative_error(pre.logits, ref), 1e-4);
}

TEST(MaskedReference, GenerationTokenIdentical) {
  auto cfg = tiny_config(3, 16, 2);
  auto ws = synth_weights(cfg, 16);
  auto seq = make_sequence(cfg, 4, 2, 20, 3);
  GenerateOptions o;
  o.prune = PruneConfig{1, 75, AttentionRank{}};
  o.max_new_tokens = 8;
  o.eos_id = 9999;
  auto g = generate_greedy(ws, cfg, seq, o);
  auto ref = masked_reference_generate(ws, cfg, seq, *g.decision, 1, 8, 9999);
  EXPECT_EQ(g.output_ids, ref);
}

}  // namespace
}  // namespace fastv
