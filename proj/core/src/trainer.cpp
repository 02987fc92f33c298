#include "hybridnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "hybridnet/checkpoint.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/metrics.hpp"

namespace hybridnet {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kDropoutStream = 4;

std::vector<int> wrap(std::vector<int> ids) {
  if (ids.empty() || ids.front() != kBosId) ids.insert(ids.begin(), kBosId);
  if (ids.back() != kEosId) ids.push_back(kEosId);
  return ids;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  for (std::size_t i : idx) {
    out.rows.push_back(data.rows[i]);
    out.features.push_back(data.features[i]);
  }
  return out;
}

}  // namespace

double warmup_lr(double lr, std::size_t step, std::size_t warmup) {
  if (warmup == 0) return lr;
  return lr * static_cast<double>(std::min(step, warmup)) / static_cast<double>(warmup);
}

Adam::Adam(const ParamStore& store, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(i).shape());
    v_.emplace_back(store.value(i).shape());
  }
}

void Adam::step(ParamStore& store, const GradBuffer& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor& w = store.value(i);
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

TokenizedRecord tokenize_row(const ManifestRow& row, const Vocab& vocab) {
  TokenizedRecord r;
  r.caption = wrap(vocab.encode(row.caption));
  r.attribute = wrap(vocab.encode(row.attribute));
  r.effect = wrap(vocab.encode(row.effect));
  r.intention = wrap(vocab.encode(row.intention));
  return r;
}

std::vector<TokenizedRecord> tokenize(const Dataset& data, const Vocab& vocab) {
  std::vector<TokenizedRecord> out;
  out.reserve(data.size());
  for (const auto& row : data.rows) out.push_back(tokenize_row(row, vocab));
  return out;
}

ManifestRow prediction_row(const Prediction& pred, const Vocab& vocab) {
  auto text = [&](std::size_t k) -> std::string {
    if (!pred.sequences[k]) return {};
    std::vector<int> ids = {kBosId};
    ids.insert(ids.end(), pred.sequences[k]->tokens.begin(), pred.sequences[k]->tokens.end());
    return vocab.decode(ids);
  };
  return ManifestRow{"pred." + pred.id, text(0), text(1), text(2), text(3)};
}

double validation_cider(const Predictor& predictor, const Dataset& data, const std::vector<TokenizedRecord>& gold,
                        const Vocab& vocab) {
  const auto& kinds = predictor.kinds();
  std::vector<std::vector<EvalPair>> pairs(kinds.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Prediction p = predictor.complete_task(data.features[i], gold[i].caption);
    for (std::size_t j = 0; j < kinds.size(); ++j) {
      const auto k = static_cast<std::size_t>(kinds[j]);
      std::vector<int> ids = p.sequences[k]->tokens;
      pairs[j].push_back(EvalPair{normalize_tokens(vocab.decode(ids)),
                                  {normalize_tokens(vocab.decode(gold[i].sequence(kinds[j])))}});
    }
  }
  double s = 0.0;
  for (const auto& corpus : pairs) s += cider(corpus);
  return s / static_cast<double>(kinds.size());
}

Trainer::Trainer(TrainConfig config, Vocab vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.model.vocab_size = vocab_.size();
  config_.validate();
  store_ = std::make_unique<ParamStore>();
  model_ = std::make_unique<HybridNet>(config_.model, *store_, derive_seed(config_.seed, kInitStream));
}

Predictor Trainer::predictor() const {
  return Predictor(*model_, *store_, config_.max_len_caption, config_.max_len_commonsense);
}

std::string Trainer::checkpoint_text() const {
  return format_config(config_) + "vocab_size = " + std::to_string(vocab_.size()) +
         "\nvocab_hash = " + hash_hex(vocab_.hash()) + "\n";
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, *store_, checkpoint_text()); }

TrainResult Trainer::fit(const Dataset& data, const TrainOptions& opts) {
  if (data.size() == 0) throw DataError("training split is empty");
  const std::vector<TokenizedRecord> tokens = tokenize(data, vocab_);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config_.seed, kSplitStream));
  split_rng.shuffle(order);
  const auto n_val = static_cast<std::size_t>(std::llround(config_.val_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> train_idx, val_idx;
  if (n_val == 0 || n_val >= data.size()) {
    train_idx.resize(data.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
    val_idx = train_idx;
  } else {
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  }
  const Dataset val = subset(data, val_idx);
  std::vector<TokenizedRecord> val_tokens;
  for (std::size_t i : val_idx) val_tokens.push_back(tokens[i]);

  auto log = [&](const std::string& line) {
    if (opts.log) *opts.log << line << '\n';
  };

  Adam adam(*store_);
  GradBuffer grads(*store_);
  const std::size_t shards = config_.threads;
  std::vector<GradBuffer> shard_grads(shards, GradBuffer(*store_));
  Rng shuffle_rng(derive_seed(config_.seed, kShuffleStream));
  const std::uint64_t dropout_seed = derive_seed(config_.seed, kDropoutStream);
  std::vector<Tensor> best;
  bool have_checkpoint = false;

  TrainResult result;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= config_.epochs && !stop; ++epoch) {
    std::vector<std::size_t> epoch_order = train_idx;
    shuffle_rng.shuffle(epoch_order);
    for (std::size_t start = 0; start < epoch_order.size() && !stop; start += config_.batch_size) {
      const std::size_t count = std::min(config_.batch_size, epoch_order.size() - start);
      const std::size_t step = result.steps + 1;
      const double inv = 1.0 / static_cast<double>(count);

      std::vector<double> losses(count);
      std::vector<std::array<double, 4>> components(count);
      auto run_shard = [&](std::size_t s) {
        GradBuffer& gb = shard_grads[s];
        gb.zero();
        for (std::size_t j = s; j < count; j += shards) {
          const std::size_t rec = epoch_order[start + j];
          Rng drop(derive_seed(dropout_seed, (step - 1) * config_.batch_size + j));
          Graph g(*store_, &gb, true);
          RunContext ctx{true, &drop, nullptr};
          JointLoss loss = joint_loss(g, *model_, data.features[rec], tokens[rec], ctx);
          losses[j] = loss.total.value()[0];
          components[j] = loss.component;
          g.backward(loss.total, inv);
        }
      };
      if (shards == 1) {
        run_shard(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t s = 0; s < shards; ++s) pool.emplace_back(run_shard, s);
        for (auto& t : pool) t.join();
      }
      grads.zero();
      for (const auto& gb : shard_grads) grads.add(gb);

      double loss = 0.0;
      std::array<double, 4> comp{};
      for (std::size_t j = 0; j < count; ++j) {
        loss += losses[j] * inv;
        for (std::size_t k = 0; k < 4; ++k) comp[k] += components[j][k] * inv;
      }
      if (!std::isfinite(loss)) {
        log("step=" + std::to_string(step) + " event=numeric_failure loss=" + fmt(loss));
        if (opts.checkpoint && !have_checkpoint) save(*opts.checkpoint);
        throw NumericError("non-finite loss at step " + std::to_string(step) +
                           (opts.checkpoint ? "; last good weights kept in " + opts.checkpoint->string() : ""));
      }
      const double lr = warmup_lr(config_.lr, step, config_.warmup_steps);
      adam.step(*store_, grads, lr);
      result.steps = step;
      result.final_loss = loss;

      std::string line = "step=" + std::to_string(step) + " epoch=" + std::to_string(epoch) + " lr=" + fmt(lr) +
                         " loss=" + fmt(loss);
      for (DecoderKind k : kAllKinds) {
        const double c = comp[static_cast<std::size_t>(k)];
        if (!std::isnan(c)) line += " " + std::string(to_string(k)) + "=" + fmt(c);
      }
      log(line);
      if (config_.max_steps && step >= config_.max_steps) stop = true;
    }
    result.epochs = epoch;

    const bool last = stop || epoch == config_.epochs;
    if (epoch % config_.eval_every == 0 || last) {
      const double c = validation_cider(predictor(), val, val_tokens, vocab_);
      log("epoch=" + std::to_string(epoch) + " val_cider=" + fmt(c));
      if (c >= result.best_val_cider) {
        result.best_val_cider = c;
        result.best_epoch = epoch;
        best.clear();
        for (std::size_t i = 0; i < store_->size(); ++i) best.push_back(store_->value(i));
        if (opts.checkpoint) {
          save(*opts.checkpoint);
          have_checkpoint = true;
        }
      }
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) store_->value(i) = best[i];
  log("done steps=" + std::to_string(result.steps) + " best_epoch=" + std::to_string(result.best_epoch) +
      " best_val_cider=" + fmt(result.best_val_cider));
  return result;
}

CheckpointMeta parse_checkpoint_text(std::string_view text) {
  CheckpointMeta meta;
  std::string config_part;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.rfind("vocab_size = ", 0) == 0) {
      meta.vocab_size = std::stoull(line.substr(13));
    } else if (line.rfind("vocab_hash = ", 0) == 0) {
      meta.vocab_hash = std::stoull(line.substr(13), nullptr, 16);
    } else {
      config_part += line + "\n";
    }
  }
  try {
    meta.config = parse_config(config_part);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config block: ") + e.what());
  }
  if (meta.vocab_size == 0) throw DataError("checkpoint config block lacks vocab_size");
  meta.config.model.vocab_size = meta.vocab_size;
  return meta;
}

Predictor LoadedModel::predictor() const {
  return Predictor(*model, *store, meta.config.max_len_caption, meta.config.max_len_commonsense);
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  TensorArchive archive = read_archive(checkpoint);
  LoadedModel out;
  out.meta = parse_checkpoint_text(archive.text);
  out.store = std::make_unique<ParamStore>();
  out.model = std::make_unique<HybridNet>(out.meta.config.model, *out.store, derive_seed(out.meta.config.seed, 1));
  restore_params(archive, *out.store);
  return out;
}

void check_vocab(const CheckpointMeta& meta, const Vocab& vocab) {
  if (meta.vocab_hash != vocab.hash() || meta.vocab_size != vocab.size()) {
    throw DataError("vocabulary mismatch: checkpoint vocab hash " + hash_hex(meta.vocab_hash) + ", data vocab hash " +
                    hash_hex(vocab.hash()));
  }
}

}  // namespace hybridnet
