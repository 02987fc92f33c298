#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hybridnet/commands.hpp"
#include "hybridnet/decoder.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"

using namespace hybridnet;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.d_ff = 16;
  c.mem_slots = 2;
  c.dropout = 0.0;
  c.motion_dim = 3;
  c.audio_dim = 2;
  c.appearance_dim = 3;
  c.vocab_size = 12;
  c.max_seq_len = 8;
  return c;
}

Tensor rand_tensor(Rng& rng, Shape s) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

FeatureBundle rand_bundle(Rng& rng, const ModelConfig& c) {
  FeatureBundle b;
  b.id = "r";
  b.motion = rand_tensor(rng, {4, c.motion_dim});
  b.audio = rand_tensor(rng, {3, c.audio_dim});
  b.appearance = rand_tensor(rng, {2, c.appearance_dim});
  return b;
}

std::vector<int> rand_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> t{kBosId};
  while (t.size() < n) t.push_back(static_cast<int>(4 + rng.below(vocab - 4)));
  return t;
}

TokenizedRecord rand_record(Rng& rng, std::size_t vocab) {
  auto seq = [&](std::size_t n) {
    auto t = rand_tokens(rng, n - 1, vocab);
    t.push_back(kEosId);
    return t;
  };
  return TokenizedRecord{seq(6), seq(3), seq(4), seq(4)};
}

/// Hand count from layer shapes.
std::size_t expected_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, h = c.n_heads, ff = c.ff_width(), s = c.mem_slots;
  std::size_t enc = 0;
  for (std::size_t in : {c.motion_dim, c.audio_dim, c.appearance_dim}) enc += in * d + d + 2 * d * 4 * d + 4 * d + d;
  if (c.fusion == Fusion::kMlp) enc += 2 * (d * d + d);
  const std::size_t mem = 4 * d * d + d + 2 * (d * d + d) + 4 * d * d + s * d;
  const std::size_t mmha = 4 * d * d + h * h * 9 + h + d * d + d;
  const std::size_t block = mmha + 4 * d * d + d + (d * ff + ff + ff * d + d) + 6 * d;
  return enc + 4 * (c.vocab_size * d + mem + c.n_blocks * block);
}

}  // namespace

TEST(Decoder, EveryHeadIsCausal) {
  const ModelConfig c = small_config();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ParamStore store;
    HybridNet model(c, store, seed);
    Rng rng(1000 + seed);
    const Tensor cross = rand_tensor(rng, {5, c.d_model});
    for (DecoderKind k : kAllKinds) {
      const std::vector<int> a = rand_tokens(rng, 7, c.vocab_size);
      std::vector<int> b = a;
      const std::size_t j = 1 + static_cast<std::size_t>(rng.below(6));
      b[j] = b[j] == 4 ? 5 : 4;
      Graph g(store, nullptr, false);
      const Tensor la = model.decoder(k).forward(g, g.constant(cross), a, {}).logits.value();
      const Tensor lb = model.decoder(k).forward(g, g.constant(cross), b, {}).logits.value();
      for (std::size_t r = 0; r < j; ++r)
        for (std::size_t v = 0; v < c.vocab_size; ++v)
          ASSERT_EQ(la.at(r, v), lb.at(r, v)) << "seed " << seed << " head " << to_string(k) << " row " << r;
      bool changed = false;
      for (std::size_t v = 0; v < c.vocab_size; ++v) changed = changed || la.at(j, v) != lb.at(j, v);
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Decoder, ParameterCountMatchesClosedForm) {
  for (Fusion f : {Fusion::kConcat, Fusion::kMlp}) {
    ModelConfig c = small_config();
    c.fusion = f;
    ParamStore store;
    HybridNet model(c, store, 1);
    const ParamCount pc = count_params(store);
    EXPECT_EQ(pc.total, expected_params(c));
    EXPECT_EQ(pc.total, store.total_elements());
    const std::size_t d = c.d_model;
    EXPECT_EQ(pc.by_module.at("dec.cap.mem"), 10 * d * d + 3 * d + c.mem_slots * d);
    EXPECT_EQ(pc.by_module.at("dec.int.embed"), c.vocab_size * d);
  }
  ModelConfig defaults;
  defaults.vocab_size = 60;
  ParamStore store;
  HybridNet model(defaults, store, 1);
  EXPECT_EQ(store.total_elements(), expected_params(defaults));
}

TEST(Decoder, ParameterNamesAreScoped) {
  ParamStore store;
  HybridNet model(small_config(), store, 1);
  std::set<std::string> names(store.names().begin(), store.names().end());
  EXPECT_EQ(names.size(), store.size());
  for (const auto& n : store.names()) {
    const bool enc = n.rfind("enc.", 0) == 0;
    bool dec = false;
    for (DecoderKind k : kAllKinds) dec = dec || n.rfind("dec." + std::string(to_string(k)) + ".", 0) == 0;
    EXPECT_TRUE(enc || dec) << n;
  }
  for (DecoderKind k : kAllKinds) {
    const std::string p = "dec." + std::string(to_string(k));
    EXPECT_TRUE(store.find(p + ".mem.M0").has_value());
    EXPECT_TRUE(store.find(p + ".block1.mmha.conv.W").has_value());
    EXPECT_FALSE(store.find(p + ".block2.mmha.conv.W").has_value());
  }
}

TEST(Decoder, LengthLimits) {
  const ModelConfig c = small_config();
  ParamStore store;
  HybridNet model(c, store, 1);
  Graph g(store, nullptr, false);
  Var cross = g.constant(Tensor({3, c.d_model}));
  const std::vector<int> too_long(c.max_seq_len + 1, kBosId);
  EXPECT_THROW(model.caption_decode(g, cross, too_long, {}), LengthError);
  EXPECT_THROW(model.caption_decode(g, cross, std::span<const int>(), {}), LengthError);
  const std::vector<int> fits(c.max_seq_len, kBosId);
  EXPECT_EQ(model.caption_decode(g, cross, fits, {}).logits.value().rows(), c.max_seq_len);
  EXPECT_THROW(model.commonsense_decode(g, DecoderKind::kCaption, cross, std::nullopt, fits, {}), ConfigError);
}

TEST(JointLoss, TotalIsSumOfComponents) {
  const ModelConfig c = small_config();
  ParamStore store;
  HybridNet model(c, store, 2);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g(store, nullptr, false);
    const JointLoss loss = joint_loss(g, model, rand_bundle(rng, c), rand_record(rng, c.vocab_size), {});
    double s = 0.0;
    for (double v : loss.component) s += v;
    EXPECT_NEAR(loss.total.value()[0], s, 1e-12);
  }
}

TEST(JointLoss, SingleTaskSkipsOtherHeads) {
  ModelConfig c = small_config();
  c.use_multicms = false;
  c.single_kind = DecoderKind::kEffect;
  ParamStore store;
  HybridNet model(c, store, 2);
  EXPECT_EQ(model.trained_commonsense(), std::vector<DecoderKind>{DecoderKind::kEffect});
  Rng rng(4);
  Graph g(store, nullptr, false);
  const JointLoss loss = joint_loss(g, model, rand_bundle(rng, c), rand_record(rng, c.vocab_size), {});
  EXPECT_TRUE(std::isnan(loss.component[1]));
  EXPECT_TRUE(std::isnan(loss.component[3]));
  EXPECT_NEAR(loss.total.value()[0], loss.component[0] + loss.component[2], 1e-12);
}

TEST(JointLoss, ZeroEmbeddingsGiveUniformNll) {
  const ModelConfig c = small_config();
  ParamStore store;
  HybridNet model(c, store, 5);
  for (DecoderKind k : kAllKinds) store.value(model.decoder(k).embedding()).fill(0.0);
  Rng rng(6);
  Graph g(store, nullptr, false);
  const JointLoss loss = joint_loss(g, model, rand_bundle(rng, c), rand_record(rng, c.vocab_size), {});
  for (double v : loss.component) EXPECT_NEAR(v, std::log(static_cast<double>(c.vocab_size)), 1e-12);
}

TEST(JointLoss, PadTargetsAreIgnored) {
  const ModelConfig c = small_config();
  ParamStore store;
  HybridNet model(c, store, 7);
  Rng rng(8);
  Graph g(store, nullptr, false);
  const Tensor cross = rand_tensor(rng, {3, c.d_model});
  const std::vector<int> gold{kBosId, 5, 6, kEosId};
  std::vector<int> padded = gold;
  padded.push_back(kPadId);
  padded.push_back(kPadId);
  const std::span<const int> in(gold.data(), 3), in_p(padded.data(), 5);
  const double a = sequence_nll(model.caption_decode(g, g.constant(cross), in, {}).logits, gold).value()[0];
  const double b = sequence_nll(model.caption_decode(g, g.constant(cross), in_p, {}).logits, padded).value()[0];
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(JointLoss, CommonsenseLossReachesCaptionDecoder) {
  const ModelConfig c = small_config();
  ParamStore store;
  HybridNet model(c, store, 9);
  Rng rng(10);
  const TokenizedRecord rec = rand_record(rng, c.vocab_size);
  GradBuffer grads(store);
  Graph g(store, &grads);
  const MultimodalFeatures mf = model.encode(g, rand_bundle(rng, c));
  const DecoderOutput cap =
      model.caption_decode(g, mf.features, std::span<const int>(rec.caption.data(), rec.caption.size() - 1), {});
  const DecoderOutput att = model.commonsense_decode(
      g, DecoderKind::kAttribute, mf.features, cap.hidden,
      std::span<const int>(rec.attribute.data(), rec.attribute.size() - 1), {});
  g.backward(sequence_nll(att.logits, rec.attribute));
  double cap_norm = 0.0, other_norm = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    double n = 0.0;
    for (double v : grads[i].data()) n += v * v;
    if (store.name(i).rfind("dec.cap.block", 0) == 0) cap_norm += n;
    if (store.name(i).rfind("dec.eff.", 0) == 0) other_norm += n;
  }
  EXPECT_GT(cap_norm, 0.0);
  EXPECT_EQ(other_norm, 0.0);
}

TEST(Decoder, DropoutOnlyInTraining) {
  ModelConfig c = small_config();
  c.dropout = 0.3;
  ParamStore store;
  HybridNet model(c, store, 11);
  Rng rng(12);
  const Tensor cross = rand_tensor(rng, {3, c.d_model});
  const std::vector<int> toks = rand_tokens(rng, 5, c.vocab_size);
  Graph g(store, nullptr, false);
  const Tensor eval1 = model.caption_decode(g, g.constant(cross), toks, {}).logits.value();
  const Tensor eval2 = model.caption_decode(g, g.constant(cross), toks, {}).logits.value();
  EXPECT_TRUE(eval1.bit_equal(eval2));
  Rng drop(13);
  RunContext train{true, &drop, nullptr};
  EXPECT_FALSE(model.caption_decode(g, g.constant(cross), toks, train).logits.value().bit_equal(eval1));
  RunContext no_rng{true, nullptr, nullptr};
  EXPECT_THROW(model.caption_decode(g, g.constant(cross), toks, no_rng), ConfigError);
}

TEST(GradCheckTargets, AllBelowTolerance) {
  GradCheckOptions opt;
  opt.floor = 1e-5;
  for (GradCheckTarget t : grad_check_targets("all")) {
    const GradCheckReport r = grad_check_target(t, opt);
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(t);
    EXPECT_GT(r.entries_checked, 0u);
  }
}
