#include <gtest/gtest.h>

#include <cmath>

#include "hybridnet/error.hpp"
#include "hybridnet/metrics.hpp"
#include "hybridnet/rng.hpp"
#include "support/oracles.hpp"

using namespace hybridnet;

namespace {

EvalPair pair(std::string_view hyp, std::initializer_list<std::string_view> refs) {
  EvalPair p{normalize_tokens(hyp), {}};
  for (auto r : refs) p.references.push_back(normalize_tokens(r));
  return p;
}

struct RandomCorpus {
  std::vector<EvalPair> pairs;
  std::vector<oracle::Sentence> hyps;
  std::vector<std::vector<oracle::Sentence>> refs;
};

RandomCorpus random_corpus(Rng& rng) {
  static const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  auto sentence = [&] {
    Tokens t(1 + rng.below(7));
    for (auto& w : t) w = words[rng.below(words.size())];
    return t;
  };
  RandomCorpus rc;
  const std::size_t n = 1 + rng.below(6);
  for (std::size_t i = 0; i < n; ++i) {
    EvalPair p{sentence(), {}};
    const std::size_t nr = 1 + rng.below(3);
    for (std::size_t r = 0; r < nr; ++r) p.references.push_back(sentence());
    rc.hyps.push_back(p.hypothesis);
    rc.refs.push_back(p.references);
    rc.pairs.push_back(std::move(p));
  }
  return rc;
}

}  // namespace

TEST(Normalize, LowercasesAndStripsMarkers) {
  EXPECT_EQ(normalize_tokens("<bos>  The CAT\tsat <eos> <pad>"), (Tokens{"the", "cat", "sat"}));
  EXPECT_TRUE(normalize_tokens("<bos> <eos>").empty());
}

TEST(Bleu, BrevityPenaltyHandExample) {
  const std::vector<EvalPair> c{pair("the cat sat on", {"the cat sat on the mat"})};
  EXPECT_NEAR(bleu(c, 4), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(bleu(c, 4), 0.6065, 1e-4);
  EXPECT_NEAR(bleu(c, 1), std::exp(-0.5), 1e-12);
}

TEST(Bleu, PerfectAndDisjoint) {
  const std::vector<EvalPair> same{pair("a b c d", {"a b c d"})};
  EXPECT_DOUBLE_EQ(bleu(same, 4), 1.0);
  const std::vector<EvalPair> none{pair("x y", {"a b"})};
  EXPECT_EQ(bleu(none, 1), 0.0);
  EXPECT_EQ(bleu(std::vector<EvalPair>{}, 1), 0.0);
}

TEST(Bleu, ClippedCounts) {
  const std::vector<EvalPair> c{pair("the the the the", {"the cat"})};
  // 1 of 4 clipped matches, hypothesis longer than reference.
  EXPECT_NEAR(bleu(c, 1), 0.25, 1e-12);
}

TEST(RougeL, HandExample) {
  const double r = 1.0, p = 2.0 / 3.0, b2 = 1.44;
  EXPECT_NEAR(rouge_l(pair("a b c", {"a c"})), (1 + b2) * r * p / (r + b2 * p), 1e-12);
  EXPECT_EQ(rouge_l(pair("x", {"a c"})), 0.0);
  EXPECT_NEAR(rouge_l(pair("a b", {"x", "a b"})), 1.0, 1e-12);
}

TEST(Meteor, HandExamples) {
  EXPECT_NEAR(meteor_lite(pair("a b c d", {"a b c d"})), 1.0 - 0.5 / 64.0, 1e-12);
  EXPECT_NEAR(meteor_lite(pair("a b c d", {"a b c d"})), 0.9922, 1e-4);
  const double p = 1.0, r = 1.0, f = p * r / (0.9 * p + 0.1 * r);
  EXPECT_NEAR(meteor_lite(pair("a b", {"b a"})), f * 0.5, 1e-12);
  EXPECT_EQ(meteor_lite(pair("a", {"b"})), 0.0);
}

TEST(Cider, SingleRecordHasZeroIdf) {
  const std::vector<EvalPair> c{pair("a b c", {"a b c"})};
  EXPECT_EQ(cider(c), 0.0);
}

TEST(Cider, IdenticalDistinctRecordsScoreOne) {
  const std::vector<EvalPair> c{pair("a b c d e", {"a b c d e"}), pair("f g h i j", {"f g h i j"})};
  EXPECT_NEAR(cider(c), 1.0, 1e-12);
  const auto per = cider_scores(c);
  ASSERT_EQ(per.size(), 2u);
  EXPECT_NEAR(per[0], 1.0, 1e-12);
}

TEST(MetricNames, RoundTrip) {
  for (Metric m : all_metrics()) EXPECT_EQ(parse_metric(to_string(m)), m);
  EXPECT_EQ(parse_metric("bleu1"), Metric::kBleu1);
  EXPECT_THROW(parse_metric("perplexity"), ConfigError);
}

class MetricOracle : public ::testing::TestWithParam<int> {};

TEST_P(MetricOracle, MatchesBruteForce) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const RandomCorpus rc = random_corpus(rng);
  for (int n = 1; n <= 4; ++n) {
    EXPECT_NEAR(bleu(rc.pairs, n), oracle::bleu(rc.hyps, rc.refs, n), 1e-9) << "BLEU-" << n;
    EXPECT_NEAR(score(static_cast<Metric>(n - 1), rc.pairs), bleu(rc.pairs, n), 0.0);
  }
  double rl = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < rc.hyps.size(); ++i) {
    rl += oracle::rouge_l(rc.hyps[i], rc.refs[i]);
    mt += oracle::meteor(rc.hyps[i], rc.refs[i]);
    EXPECT_NEAR(rouge_l(rc.pairs[i]), oracle::rouge_l(rc.hyps[i], rc.refs[i]), 1e-9);
    EXPECT_NEAR(meteor_lite(rc.pairs[i]), oracle::meteor(rc.hyps[i], rc.refs[i]), 1e-9);
  }
  const double n = static_cast<double>(rc.hyps.size());
  EXPECT_NEAR(rouge_l(rc.pairs), rl / n, 1e-9);
  EXPECT_NEAR(meteor_lite(rc.pairs), mt / n, 1e-9);
  EXPECT_NEAR(cider(rc.pairs), oracle::cider(rc.hyps, rc.refs), 1e-9);
  EXPECT_EQ(score(Metric::kCider, rc.pairs), cider(rc.pairs));
}

INSTANTIATE_TEST_SUITE_P(Corpora, MetricOracle, ::testing::Range(1, 21));

TEST(Lcs, BruteForceAgreesOnRandomPairs) {
  Rng rng(99);
  static const std::vector<std::string> words{"a", "b", "c"};
  for (int trial = 0; trial < 50; ++trial) {
    oracle::Sentence a(1 + rng.below(8)), b(1 + rng.below(8));
    for (auto& w : a) w = words[rng.below(3)];
    for (auto& w : b) w = words[rng.below(3)];
    const double l = static_cast<double>(oracle::lcs_bruteforce(a, b));
    const double expect = l == 0 ? 0.0
                                 : (1 + 1.44) * (l / static_cast<double>(b.size())) * (l / static_cast<double>(a.size())) /
                                       (l / static_cast<double>(b.size()) + 1.44 * l / static_cast<double>(a.size()));
    EXPECT_NEAR(rouge_l(EvalPair{a, {b}}), expect, 1e-12);
  }
}
