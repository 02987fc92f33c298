#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hybridnet/checkpoint.hpp"
#include "hybridnet/commands.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/trainer.hpp"

using namespace hybridnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hybridnet_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.d_model = 8;
  c.model.n_heads = 2;
  c.model.n_blocks = 1;
  c.model.d_ff = 16;
  c.model.mem_slots = 2;
  c.model.dropout = 0.1;
  c.epochs = 2;
  c.batch_size = 4;
  c.warmup_steps = 2;
  c.lr = 1e-3;
  c.max_len_caption = 6;
  c.max_len_commonsense = 4;
  c.val_fraction = 0.25;
  return c;
}

/// Small corpus shared by the tests in this file.
const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = scratch("corpus");
    SynthOptions opt;
    opt.n_train = 12;
    opt.n_test = 4;
    opt.force = true;
    gen_corpus(opt, d);
    return d;
  }();
  return dir;
}

#ifdef HYBRIDNET_CLI
int run_cli(const std::string& args) {
  const std::string cmd = std::string(HYBRIDNET_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(Config, FormatParseRoundTrip) {
  TrainConfig c = tiny_config();
  c.model.coeffs.alpha = 0.123456789012345;
  c.model.use_crc = false;
  c.model.single_kind = DecoderKind::kEffect;
  c.model.fusion = Fusion::kMlp;
  c.lr = 3.3e-5;
  const TrainConfig back = parse_config(format_config(c));
  for (const auto& key : config_keys()) EXPECT_EQ(get_config_value(back, key), get_config_value(c, key)) << key;
  EXPECT_EQ(format_config(back), format_config(c));
}

TEST(Config, CommentsAndErrors) {
  const TrainConfig c = parse_config("# comment\n\nd_model = 16  # trailing\nn_heads=4\n");
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_EQ(c.model.n_heads, 4u);
  try {
    parse_config("d_model = 16\nwidth = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("use_mmha = maybe\n"), ConfigError);
  TrainConfig bad = tiny_config();
  bad.model.n_heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, SeedEnvironmentOverride) {
  TrainConfig c;
  ::setenv("HYBRID_SEED", "42", 1);
  apply_env_overrides(c);
  ::unsetenv("HYBRID_SEED");
  EXPECT_EQ(c.seed, 42u);
}

TEST(Schedule, WarmupEndpoints) {
  EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 1, 200), 1e-4 / 200);
  EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 100, 200), 0.5e-4);
  EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 200, 200), 1e-4);
  EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 5000, 200), 1e-4);
  EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 1, 0), 1e-4);
}

TEST(Adam, MatchesHandUpdates) {
  ParamStore store;
  const ParamId p = store.add("w", Tensor::vector({1.0, -2.0}));
  Adam adam(store);
  GradBuffer grads(store);
  double m[2] = {0, 0}, v[2] = {0, 0}, theta[2] = {1.0, -2.0};
  const double g_seq[3][2] = {{0.5, -0.1}, {0.2, 0.3}, {-1.0, 0.0}};
  for (int t = 1; t <= 3; ++t) {
    grads[0] = Tensor::vector({g_seq[t - 1][0], g_seq[t - 1][1]});
    adam.step(store, grads, 0.1);
    for (int i = 0; i < 2; ++i) {
      const double g = g_seq[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      theta[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(store.value(p)[static_cast<std::size_t>(i)], theta[i], 1e-14) << "step " << t;
    }
  }
  EXPECT_EQ(adam.steps(), 3u);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = tiny_config();
  c.lr = 0.0;
  c.max_steps = 3;
  const Vocab vocab = Vocab::load(corpus() / "vocab.txt");
  Trainer t(c, vocab);
  ParamStore before = t.store();
  t.fit(load_split(corpus() / "train"));
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(t.store().value(i).bit_equal(before.value(i)));
}

TEST(Trainer, RunsAreReproducible) {
  const fs::path d = scratch("repro");
  const TrainConfig c = tiny_config();
  cmd_train(c, corpus(), d / "a.ckpt", d / "a.log", nullptr);
  cmd_train(c, corpus(), d / "b.ckpt", d / "b.log", nullptr);
  const std::string log = slurp(d / "a.log");
  EXPECT_NE(log.find("step=1 "), std::string::npos);
  EXPECT_NE(log.find("val_cider="), std::string::npos);
  EXPECT_EQ(log, slurp(d / "b.log"));
  EXPECT_EQ(slurp(d / "a.ckpt"), slurp(d / "b.ckpt"));
  fs::remove_all(d);
}

TEST(Trainer, NonFiniteLossRaises) {
  TrainConfig c = tiny_config();
  c.lr = 1e300;
  c.warmup_steps = 0;
  c.max_steps = 20;
  const fs::path d = scratch("nan");
  const Vocab vocab = Vocab::load(corpus() / "vocab.txt");
  Trainer t(c, vocab);
  TrainOptions opts;
  opts.checkpoint = d / "m.ckpt";
  EXPECT_THROW(t.fit(load_split(corpus() / "train"), opts), NumericError);
  EXPECT_TRUE(fs::exists(d / "m.ckpt"));
  fs::remove_all(d);
}

TEST(Checkpoint, RoundTripGivesIdenticalLogits) {
  const fs::path d = scratch("ckpt");
  const Vocab vocab = Vocab::load(corpus() / "vocab.txt");
  Trainer t(tiny_config(), vocab);
  t.save(d / "m.ckpt");
  const LoadedModel loaded = load_model(d / "m.ckpt");
  EXPECT_EQ(loaded.meta.vocab_hash, vocab.hash());
  EXPECT_EQ(format_config(loaded.meta.config), format_config(t.config()));
  ASSERT_EQ(loaded.store->size(), t.store().size());
  const Dataset test = load_split(corpus() / "test");
  const TokenizedRecord gold = tokenize_row(test.rows[0], vocab);
  Graph ga(t.store(), nullptr, false), gb(*loaded.store, nullptr, false);
  const JointLoss la = joint_loss(ga, t.model(), test.features[0], gold, {});
  const JointLoss lb = joint_loss(gb, *loaded.model, test.features[0], gold, {});
  EXPECT_EQ(la.total.value()[0], lb.total.value()[0]);
  const Prediction pa = t.predictor().generate_task(test.features[0]);
  const Prediction pb = loaded.predictor().generate_task(test.features[0]);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(pa.sequences[k]->log_probs, pb.sequences[k]->log_probs);
  fs::remove_all(d);
}

TEST(Checkpoint, ArchiveDetectsCorruption) {
  TensorArchive a;
  a.records.push_back({"x", Tensor::matrix({{1.5, -2.25}, {3.0, 0.125}})});
  a.records.push_back({"y", Tensor::vector({7.0})});
  a.text = "note = 1\n";
  const std::string bytes = encode_archive(a);
  const TensorArchive back = decode_archive(bytes);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_TRUE(back.records[0].tensor.bit_equal(a.records[0].tensor));
  EXPECT_EQ(back.records[0].tensor.shape(), (Shape{2, 2}));
  EXPECT_EQ(back.text, a.text);
  EXPECT_EQ(bytes.substr(0, 4), "HYBR");

  for (std::size_t pos : {std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x40);
    EXPECT_THROW(decode_archive(bad), DataError) << "flip at " << pos;
  }
  EXPECT_THROW(decode_archive(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_archive(bytes + "x"), DataError);

  const TensorArchive f32 = decode_archive(encode_archive(a, DType::kF32));
  EXPECT_TRUE(f32.records[0].tensor.bit_equal(a.records[0].tensor));
}

TEST(Checkpoint, RestoreRejectsMismatchedShapes) {
  ParamStore a, b;
  a.add("w", Tensor({2, 2}));
  b.add("w", Tensor({2, 3}));
  TensorArchive arch;
  arch.records.push_back({"w", a.value(std::size_t{0})});
  EXPECT_THROW(restore_params(arch, b), DataError);
  ParamStore c;
  c.add("v", Tensor({2, 2}));
  EXPECT_THROW(restore_params(arch, c), DataError);
}

TEST(Vocabulary, MismatchNamesBothHashes) {
  const fs::path d = scratch("vocab");
  const Vocab vocab = Vocab::load(corpus() / "vocab.txt");
  Trainer t(tiny_config(), vocab);
  t.save(d / "m.ckpt");
  SynthOptions other;
  other.seed = 99;
  other.n_train = 3;
  other.n_test = 1;
  gen_corpus(other, d / "other");
  const Vocab v2 = Vocab::load(d / "other" / "vocab.txt");
  ASSERT_NE(v2.hash(), vocab.hash());
  try {
    check_vocab(load_model(d / "m.ckpt").meta, v2);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(hash_hex(vocab.hash())), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find(hash_hex(v2.hash())), std::string::npos) << e.what();
  }
  EXPECT_THROW(cmd_infer(Task::kGenerate, d / "m.ckpt", d / "other", "test", d / "p.tsv"), DataError);
  fs::remove_all(d);
}

TEST(Infer, OutputFollowsManifestSchema) {
  const fs::path d = scratch("infer");
  const Vocab vocab = Vocab::load(corpus() / "vocab.txt");
  Trainer t(tiny_config(), vocab);
  t.save(d / "m.ckpt");
  for (Task task : {Task::kComplete, Task::kGenerate}) {
    cmd_infer(task, d / "m.ckpt", corpus(), "test", d / "p.tsv");
    const auto rows = read_manifest(d / "p.tsv");
    const auto ref = read_manifest(corpus() / "test" / "corpus.tsv");
    ASSERT_EQ(rows.size(), ref.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].id, "pred." + ref[i].id);
      for (const std::string* f : {&rows[i].caption, &rows[i].attribute, &rows[i].effect, &rows[i].intention})
        EXPECT_EQ(f->rfind("<bos>", 0), 0u) << *f;
      if (task == Task::kComplete) {
        EXPECT_EQ(rows[i].caption, ref[i].caption);
      }
    }
    const EvalReport r = cmd_eval(d / "p.tsv", corpus() / "test" / "corpus.tsv", all_metrics());
    EXPECT_EQ(r.records, ref.size());
    if (task == Task::kComplete) {
      EXPECT_DOUBLE_EQ(r.heads[0]->at(Metric::kBleu3), 1.0);
    }
  }
  fs::remove_all(d);
}

TEST(Eval, MatchesDirectMetricComputation) {
  const std::vector<ManifestRow> ref{{"a", "<bos> x y z <eos>", "<bos> p <eos>", "", ""},
                                     {"b", "<bos> x q <eos>", "<bos> r <eos>", "", ""}};
  const std::vector<ManifestRow> pred{{"pred.b", "<bos> x q <eos>", "<bos> p <eos>", "", ""},
                                      {"pred.a", "<bos> x y <eos>", "<bos> p <eos>", "", ""}};
  const EvalReport r = evaluate_manifests(pred, ref, all_metrics());
  const std::vector<EvalPair> cap{{{"x", "y"}, {{"x", "y", "z"}}}, {{"x", "q"}, {{"x", "q"}}}};
  for (Metric m : all_metrics()) EXPECT_DOUBLE_EQ(r.heads[0]->at(m), score(m, cap)) << to_string(m);
  const std::vector<EvalPair> att{{{"p"}, {{"p"}}}, {{"p"}, {{"r"}}}};
  EXPECT_DOUBLE_EQ(r.heads[1]->at(Metric::kBleu1), score(Metric::kBleu1, att));
  EXPECT_FALSE(r.heads[2].has_value());
  EXPECT_FALSE(r.heads[3].has_value());

  std::ostringstream out;
  write_report(out, r);
  EXPECT_NE(out.str().find("caption.BLEU-1="), std::string::npos);

  try {
    evaluate_manifests({pred[0]}, ref, all_metrics());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
  }
  std::vector<ManifestRow> extra = pred;
  extra.push_back({"pred.zzz", "", "", "", ""});
  EXPECT_THROW(evaluate_manifests(extra, ref, all_metrics()), DataError);
}

#ifdef HYBRIDNET_CLI
TEST(Cli, ExitCodes) {
  const fs::path d = scratch("exit");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("train --data " + corpus().string()), 1);
  EXPECT_EQ(run_cli("train --data " + corpus().string() + " --out " + (d / "m.ckpt").string() + " --set width=3"), 1);
  EXPECT_EQ(run_cli("eval --pred " + (d / "missing.tsv").string() + " --ref " + (d / "missing.tsv").string()), 2);
  EXPECT_EQ(run_cli("gen-data --out " + corpus().string()), 2);
  EXPECT_EQ(run_cli("grad-check --module memory"), 0);
  EXPECT_EQ(run_cli("grad-check --module memory --tol 1e-30"), 3);
  fs::remove_all(d);
}

TEST(Cli, EndToEndPipeline) {
  const fs::path d = scratch("e2e");
  const std::string data = (d / "data").string(), ckpt = (d / "m.ckpt").string();
  ASSERT_EQ(run_cli("gen-data --out " + data + " --n-train 8 --n-test 3"), 0);
  const std::string sets =
      " --set d_model=8 --set n_heads=2 --set n_blocks=1 --set d_ff=16 --set epochs=1 --set batch_size=4";
  ASSERT_EQ(run_cli("train --quiet --data " + data + " --out " + ckpt + " --log " + (d / "log").string() + sets), 0);
  ASSERT_EQ(run_cli("infer --task generate --ckpt " + ckpt + " --data " + data + " --out " + (d / "p.tsv").string()), 0);
  ASSERT_EQ(run_cli("eval --pred " + (d / "p.tsv").string() + " --ref " + data + "/test/corpus.tsv --out " +
                    (d / "r.txt").string()),
            0);
  EXPECT_NE(slurp(d / "r.txt").find("caption.CIDEr="), std::string::npos);
  ASSERT_EQ(run_cli("dump-attn --ckpt " + ckpt + " --data " + data + " --id test00000 --decoder att --out " +
                    (d / "a.txt").string()),
            0);
  EXPECT_NE(slurp(d / "a.txt").find("block=0 head=1"), std::string::npos);
  EXPECT_EQ(run_cli("dump-attn --ckpt " + ckpt + " --data " + data + " --id nope --out " + (d / "b.txt").string()), 2);
  fs::remove_all(d);
}
#endif
