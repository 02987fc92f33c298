#include "hybridnet/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "hybridnet/checkpoint.hpp"
#include "hybridnet/decoder.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"
#include "hybridnet/trainer.hpp"

namespace hybridnet {

namespace {

class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::ostream* a, std::ostream* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    if (a_) a_->put(static_cast<char>(c));
    if (b_) b_->put(static_cast<char>(c));
    return c;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    if (a_) a_->write(s, n);
    if (b_) b_->write(s, n);
    return n;
  }
  int sync() override {
    if (a_) a_->flush();
    if (b_) b_->flush();
    return 0;
  }

 private:
  std::ostream* a_;
  std::ostream* b_;
};

void check_feature_dims(const Dataset& data, const ModelConfig& m) {
  for (const auto& f : data.features) {
    const std::pair<const Tensor*, std::size_t> checks[] = {
        {&f.motion, m.motion_dim}, {&f.audio, m.audio_dim}, {&f.appearance, m.appearance_dim}};
    for (const auto& [t, d] : checks) {
      if (t->cols() != d) {
        throw DataError("record '" + f.id + "' has feature width " + std::to_string(t->cols()) + ", config expects " +
                        std::to_string(d));
      }
    }
  }
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

const char* kHeadNames[4] = {"caption", "attribute", "effect", "intention"};

const std::string& field_of(const ManifestRow& r, std::size_t k) {
  switch (k) {
    case 0: return r.caption;
    case 1: return r.attribute;
    case 2: return r.effect;
    default: return r.intention;
  }
}

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.mem_slots = 2;
  c.n_blocks = 2;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.motion_dim = 3;
  c.audio_dim = 2;
  c.appearance_dim = 3;
  c.vocab_size = 9;
  c.max_seq_len = 8;
  return c;
}

}  // namespace

TrainSummary cmd_train(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& checkpoint, const std::optional<std::filesystem::path>& log_path,
                       std::ostream* echo) {
  cfg.validate();
  Vocab vocab = Vocab::load(data_dir / "vocab.txt");
  const Dataset data = load_split(data_dir / "train");
  check_feature_dims(data, cfg.model);

  std::ofstream log_file;
  if (log_path) {
    log_file.open(*log_path, std::ios::app);
    if (!log_file) throw DataError("cannot open log " + log_path->string());
  }
  TeeBuf tee(log_path ? &log_file : nullptr, echo);
  std::ostream log(&tee);

  Trainer trainer(cfg, std::move(vocab));
  TrainOptions opts;
  opts.checkpoint = checkpoint;
  opts.log = &log;
  const TrainResult r = trainer.fit(data, opts);
  log.flush();
  return TrainSummary{r.steps, r.final_loss, r.best_val_cider, r.best_epoch};
}

Task parse_task(std::string_view s) {
  if (s == "complete") return Task::kComplete;
  if (s == "generate") return Task::kGenerate;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected complete|generate)");
}

void cmd_infer(Task task, const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
               const std::string& split, const std::filesystem::path& out) {
  LoadedModel loaded = load_model(checkpoint);
  const Vocab vocab = Vocab::load(data_dir / "vocab.txt");
  check_vocab(loaded.meta, vocab);
  const Dataset data = load_split(data_dir / split);
  check_feature_dims(data, loaded.meta.config.model);
  const Predictor predictor = loaded.predictor();
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Prediction p = task == Task::kComplete
                             ? predictor.complete_task(data.features[i], tokenize_row(data.rows[i], vocab).caption)
                             : predictor.generate_task(data.features[i]);
    ManifestRow row = prediction_row(p, vocab);
    if (task == Task::kComplete) row.caption = data.rows[i].caption;
    rows.push_back(std::move(row));
  }
  write_manifest(out, rows);
}

EvalReport evaluate_manifests(const std::vector<ManifestRow>& pred, const std::vector<ManifestRow>& ref,
                              const std::vector<Metric>& metrics) {
  std::unordered_map<std::string, const ManifestRow*> by_id;
  for (const auto& p : pred) {
    const std::string id = p.id.rfind("pred.", 0) == 0 ? p.id.substr(5) : p.id;
    if (!by_id.emplace(id, &p).second) throw DataError("duplicate prediction for id '" + id + "'");
  }
  std::vector<std::string> missing;
  std::vector<const ManifestRow*> matched;
  for (const auto& r : ref) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      missing.push_back(r.id);
    } else {
      matched.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " reference ids lack predictions:";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, missing.size()); ++i) msg += " " + missing[i];
    throw DataError(msg);
  }
  if (pred.size() != ref.size()) {
    throw DataError(std::to_string(pred.size() - ref.size()) + " predictions have no reference");
  }

  EvalReport report;
  report.metrics = metrics;
  report.records = ref.size();
  for (std::size_t k = 0; k < 4; ++k) {
    bool any = false;
    for (const auto* p : matched) any = any || !split_tokens(field_of(*p, k)).empty();
    if (!any) continue;
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      pairs.push_back(EvalPair{normalize_tokens(field_of(*matched[i], k)), {normalize_tokens(field_of(ref[i], k))}});
    }
    std::map<Metric, double> scores;
    for (Metric m : metrics) scores[m] = score(m, pairs);
    report.heads[k] = std::move(scores);
  }
  return report;
}

EvalReport cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& ref,
                    const std::vector<Metric>& metrics) {
  return evaluate_manifests(read_manifest(pred), read_manifest(ref), metrics);
}

void write_report(std::ostream& out, const EvalReport& report) {
  out << "records=" << report.records << '\n';
  for (std::size_t k = 0; k < 4; ++k) {
    if (!report.heads[k]) continue;
    for (Metric m : report.metrics) out << kHeadNames[k] << '.' << to_string(m) << '=' << pct(report.heads[k]->at(m)) << '\n';
  }
  out << '\n' << std::left << std::setw(10) << "head";
  for (Metric m : report.metrics) out << std::right << std::setw(9) << to_string(m);
  out << '\n';
  for (std::size_t k = 0; k < 4; ++k) {
    if (!report.heads[k]) continue;
    out << std::left << std::setw(10) << kHeadNames[k];
    for (Metric m : report.metrics) out << std::right << std::setw(9) << pct(report.heads[k]->at(m));
    out << '\n';
  }
}

const std::vector<AblationRung>& ablation_ladder() {
  static const std::vector<AblationRung> kLadder = {
      {"baseline", false, false, false, false, true},  {"+multimodal", true, false, false, false, true},
      {"+multi-cms", true, true, false, false, true},  {"+MMHA", true, true, true, false, true},
      {"+CRC", true, true, true, true, true},           {"no-audio", true, true, true, true, false},
  };
  return kLadder;
}

double AblationRow::mean_commonsense_cider() const { return (cider[1] + cider[2] + cider[3]) / 3.0; }

std::vector<AblationRow> cmd_ablate(const TrainConfig& base, const std::filesystem::path& data_dir,
                                    const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& rungs,
                                    std::ostream* progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const Vocab vocab = Vocab::load(data_dir / "vocab.txt");
  const Dataset train = load_split(data_dir / "train");
  const Dataset test = load_split(data_dir / "test");
  check_feature_dims(train, base.model);
  check_feature_dims(test, base.model);
  const std::vector<TokenizedRecord> gold = tokenize(test, vocab);

  for (const auto& name : rungs) {
    bool known = false;
    for (const auto& r : ablation_ladder()) known = known || r.name == name;
    if (!known) throw ConfigError("unknown ablation rung '" + name + "'");
  }

  std::vector<AblationRow> rows;
  for (const AblationRung& rung : ablation_ladder()) {
    if (!rungs.empty() && std::find(rungs.begin(), rungs.end(), rung.name) == rungs.end()) continue;
    AblationRow row;
    row.rung = rung.name;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.model.use_multimodal = rung.use_multimodal;
      cfg.model.use_multicms = rung.use_multicms;
      cfg.model.use_mmha = rung.use_mmha;
      cfg.model.use_crc = rung.use_crc;
      cfg.model.use_audio = rung.use_audio;
      std::vector<DecoderKind> runs;
      if (rung.use_multicms) {
        runs.push_back(DecoderKind::kAttribute);
      } else {
        runs.assign(kCommonsenseKinds.begin(), kCommonsenseKinds.end());
      }
      std::vector<ManifestRow> preds(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) preds[i].id = "pred." + test.rows[i].id;
      for (std::size_t r = 0; r < runs.size(); ++r) {
        cfg.model.single_kind = runs[r];
        Trainer trainer(cfg, vocab);
        const TrainResult tr = trainer.fit(train);
        if (progress) {
          *progress << "rung=" << rung.name << " seed=" << seed;
          if (!rung.use_multicms) *progress << " head=" << to_string(runs[r]);
          *progress << " steps=" << tr.steps << " loss=" << tr.final_loss << " val_cider=" << tr.best_val_cider
                    << std::endl;
        }
        const Predictor predictor = trainer.predictor();
        for (std::size_t i = 0; i < test.size(); ++i) {
          const Prediction p = predictor.complete_task(test.features[i], gold[i].caption);
          const ManifestRow pr = prediction_row(p, vocab);
          for (DecoderKind k : predictor.kinds()) {
            const std::string& text = field_of(pr, static_cast<std::size_t>(k));
            switch (k) {
              case DecoderKind::kAttribute: preds[i].attribute = text; break;
              case DecoderKind::kEffect: preds[i].effect = text; break;
              case DecoderKind::kIntention: preds[i].intention = text; break;
              case DecoderKind::kCaption: break;
            }
          }
          if (r == 0) {
            std::vector<int> ids = {kBosId};
            const Prediction gen = predictor.generate_task(test.features[i]);
            ids.insert(ids.end(), gen.sequences[0]->tokens.begin(), gen.sequences[0]->tokens.end());
            preds[i].caption = vocab.decode(ids);
          }
        }
      }
      const EvalReport rep = evaluate_manifests(preds, test.rows, {Metric::kBleu1, Metric::kCider});
      double seed_mean = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double c = rep.heads[k] ? rep.heads[k]->at(Metric::kCider) : 0.0;
        const double b = rep.heads[k] ? rep.heads[k]->at(Metric::kBleu1) : 0.0;
        row.cider[k] += c / static_cast<double>(seeds.size());
        row.bleu1[k] += b / static_cast<double>(seeds.size());
        if (k > 0) seed_mean += c / 3.0;
      }
      row.seed_mean_cider.push_back(seed_mean);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows) {
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < 4; ++k) {
      out << r.rung << '.' << kHeadNames[k] << ".CIDEr=" << pct(r.cider[k]) << '\n';
      out << r.rung << '.' << kHeadNames[k] << ".BLEU-1=" << pct(r.bleu1[k]) << '\n';
    }
    out << r.rung << ".commonsense.CIDEr=" << pct(r.mean_commonsense_cider()) << '\n';
  }
  out << '\n' << std::left << std::setw(12) << "rung";
  for (const char* h : kHeadNames) out << std::right << std::setw(12) << (std::string(h).substr(0, 3) + ".CIDEr");
  out << std::right << std::setw(12) << "mean.CIDEr" << std::setw(12) << "cap.BLEU-1" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.rung;
    for (std::size_t k = 0; k < 4; ++k) out << std::right << std::setw(12) << pct(r.cider[k]);
    out << std::right << std::setw(12) << pct(r.mean_commonsense_cider()) << std::setw(12) << pct(r.bleu1[0]) << '\n';
  }
}

const std::vector<GradCheckTarget>& grad_check_targets(std::string_view which) {
  static const std::vector<GradCheckTarget> kAll = {GradCheckTarget::kMemory, GradCheckTarget::kMmha,
                                                    GradCheckTarget::kBlock, GradCheckTarget::kModel};
  static const std::vector<GradCheckTarget> kMemory = {GradCheckTarget::kMemory};
  static const std::vector<GradCheckTarget> kMmha = {GradCheckTarget::kMmha};
  static const std::vector<GradCheckTarget> kBlock = {GradCheckTarget::kBlock};
  static const std::vector<GradCheckTarget> kModel = {GradCheckTarget::kModel};
  if (which == "all") return kAll;
  if (which == "memory") return kMemory;
  if (which == "mmha") return kMmha;
  if (which == "block") return kBlock;
  if (which == "model") return kModel;
  throw ConfigError("unknown grad-check module '" + std::string(which) + "' (expected memory|mmha|block|model|all)");
}

std::string_view to_string(GradCheckTarget t) {
  switch (t) {
    case GradCheckTarget::kMemory: return "memory";
    case GradCheckTarget::kMmha: return "mmha";
    case GradCheckTarget::kBlock: return "block";
    case GradCheckTarget::kModel: return "model";
  }
  return "?";
}

GradCheckReport grad_check_target(GradCheckTarget target, const GradCheckOptions& options) {
  const ModelConfig cfg = tiny_config();
  constexpr std::size_t n = 4;
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.n_heads;
  Rng rng(0x6C4ECCULL + static_cast<std::uint64_t>(target));
  ParamStore store;

  switch (target) {
    case GradCheckTarget::kMemory: {
      auto mem = std::make_shared<MemoryModule>("mem", cfg, store, rng);
      // M0 starts at zero; move it off the origin so every path is exercised.
      for (double& v : store.value(mem->params().m0).data()) v = rng.uniform(-0.5, 0.5);
      const Tensor emb = random_tensor(rng, {n, d});
      const Tensor w = random_tensor(rng, {n, d});
      return grad_check(
          [mem, emb, w](Graph& g) {
            MemoryRollout r = mem->rollout(g, g.constant(emb));
            return sum(mul(*r.pooled, g.constant(w)));
          },
          store, options);
    }
    case GradCheckTarget::kMmha: {
      auto attn = std::make_shared<MemoryRoutedAttention>("mmha", cfg, store, rng);
      for (double& v : store.value(attn->params().conv_b).data()) v = rng.uniform(-0.2, 0.2);
      const Tensor x = random_tensor(rng, {n, d});
      const Tensor pooled = random_tensor(rng, {n, d});
      const Tensor previous = random_tensor(rng, {h, n, n});
      const Tensor w = random_tensor(rng, {n, d});
      return grad_check(
          [attn, x, pooled, previous, w](Graph& g) {
            MmhaOutput o = attn->forward(g, g.constant(x), g.constant(pooled), g.constant(previous));
            return sum(mul(o.x_out, g.constant(w)));
          },
          store, options);
    }
    case GradCheckTarget::kBlock: {
      auto block = std::make_shared<DecoderBlock>("block", cfg, store, rng);
      const Tensor x = random_tensor(rng, {n, d});
      const Tensor pooled = random_tensor(rng, {n, d});
      const Tensor previous = random_tensor(rng, {h, n, n});
      const Tensor cross = random_tensor(rng, {3, d});
      const Tensor w = random_tensor(rng, {n, d});
      return grad_check(
          [block, x, pooled, previous, cross, w](Graph& g) {
            BlockOutput o = block->forward(g, g.constant(x), g.constant(cross), g.constant(pooled),
                                           g.constant(previous), RunContext{});
            return sum(mul(o.x, g.constant(w)));
          },
          store, options);
    }
    case GradCheckTarget::kModel: {
      auto model = std::make_shared<HybridNet>(cfg, store, 0x30DE1ULL);
      for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        const bool zero_init = name.ends_with(".b") || name.ends_with(".bo") || name.ends_with(".b1") ||
                               name.ends_with(".b2") || name.ends_with(".m0");
        if (zero_init) {
          for (double& v : store.value(i).data()) v = rng.uniform(-0.1, 0.1);
        }
      }
      FeatureBundle bundle;
      bundle.id = "gc";
      bundle.motion = random_tensor(rng, {3, cfg.motion_dim});
      bundle.audio = random_tensor(rng, {2, cfg.audio_dim});
      bundle.appearance = random_tensor(rng, {2, cfg.appearance_dim});
      TokenizedRecord gold;
      gold.caption = {kBosId, 4, 5, 6, kEosId};
      gold.attribute = {kBosId, 7, kEosId};
      gold.effect = {kBosId, 8, 4, kEosId};
      gold.intention = {kBosId, 5, 7, kEosId};
      return grad_check(
          [model, bundle, gold](Graph& g) { return joint_loss(g, *model, bundle, gold, RunContext{}).total; }, store,
          options);
    }
  }
  throw ConfigError("unknown grad-check target");
}

void cmd_dump_attn(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                   const std::string& split, const std::string& id, DecoderKind kind, const std::filesystem::path& out) {
  LoadedModel loaded = load_model(checkpoint);
  const Vocab vocab = Vocab::load(data_dir / "vocab.txt");
  check_vocab(loaded.meta, vocab);
  const Dataset data = load_split(data_dir / split);
  std::size_t idx = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.rows[i].id == id) idx = i;
  }
  if (idx == data.size()) throw DataError("record '" + id + "' not found in " + (data_dir / split).string());
  if (kind != DecoderKind::kCaption) {
    const auto trained = loaded.model->trained_commonsense();
    if (std::find(trained.begin(), trained.end(), kind) == trained.end()) {
      throw ConfigError("checkpoint was not trained for the " + std::string(to_string(kind)) + " head");
    }
  }
  const TokenizedRecord gold = tokenize_row(data.rows[idx], vocab);
  const std::vector<int>& seq = gold.sequence(kind);
  const std::span<const int> inputs(seq.data(), seq.size() - 1);

  Graph g(*loaded.store, nullptr, false);
  std::vector<AttentionMapSet> trace;
  RunContext traced{false, nullptr, &trace};
  MultimodalFeatures mf = loaded.model->encode(g, data.features[idx]);
  if (kind == DecoderKind::kCaption) {
    loaded.model->caption_decode(g, mf.features, inputs, traced);
  } else {
    const std::span<const int> cap(gold.caption.data(), gold.caption.size() - 1);
    DecoderOutput c = loaded.model->caption_decode(g, mf.features, cap, RunContext{});
    loaded.model->commonsense_decode(g, kind, mf.features, c.hidden, inputs, traced);
  }

  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out.string());
  os << "# record=" << id << " decoder=" << to_string(kind) << " tokens=" << vocab.decode(inputs) << '\n';
  char buf[32];
  for (std::size_t b = 0; b < trace.size(); ++b) {
    const Tensor& a = trace[b].out.value();
    for (std::size_t head = 0; head < a.dim(0); ++head) {
      os << "block=" << b << " head=" << head << '\n';
      for (std::size_t r = 0; r < a.dim(1); ++r) {
        for (std::size_t c = 0; c < a.dim(2); ++c) {
          std::snprintf(buf, sizeof(buf), "%s%.6f", c ? " " : "", a.at(head, r, c));
          os << buf;
        }
        os << '\n';
      }
    }
  }
}

}  // namespace hybridnet
