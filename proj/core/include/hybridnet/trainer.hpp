#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "hybridnet/config.hpp"
#include "hybridnet/decoder.hpp"
#include "hybridnet/generate.hpp"
#include "hybridnet/synthdata.hpp"
#include "hybridnet/vocab.hpp"

namespace hybridnet {

/// lr · min(step, warmup) / warmup for a 1-based step; lr when warmup is 0.
double warmup_lr(double lr, std::size_t step, std::size_t warmup);

class Adam {
 public:
  explicit Adam(const ParamStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One bias-corrected update of every parameter with gradient `grads`.
  void step(ParamStore& store, const GradBuffer& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Encodes the four sentences of every manifest row. Sentences that lack
/// <bos>/<eos> are wrapped.
TokenizedRecord tokenize_row(const ManifestRow& row, const Vocab& vocab);
std::vector<TokenizedRecord> tokenize(const Dataset& data, const Vocab& vocab);

/// Manifest row of a prediction: id gets the "pred." prefix, sequences are
/// written as "<bos> ... <eos>", and heads that were not produced stay empty.
ManifestRow prediction_row(const Prediction& pred, const Vocab& vocab);

/// Mean CIDEr over the trained commonsense heads, complete task.
double validation_cider(const Predictor& predictor, const Dataset& data, const std::vector<TokenizedRecord>& gold,
                        const Vocab& vocab);

struct TrainResult {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double best_val_cider = -1.0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  /// Best-validation weights are written here after every improvement.
  std::optional<std::filesystem::path> checkpoint;
  /// Per-step `key=value` lines; nullptr disables logging.
  std::ostream* log = nullptr;
};

/// Parameters, model and vocabulary of one run.
class Trainer {
 public:
  Trainer(TrainConfig config, Vocab vocab);

  /// Trains on `data` (a validation share is carved out per val_fraction) and
  /// leaves the best-validation weights in store(). A non-finite loss writes
  /// the last good weights to the checkpoint and throws NumericError.
  TrainResult fit(const Dataset& data, const TrainOptions& opts = {});

  const TrainConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& store() { return *store_; }
  const ParamStore& store() const { return *store_; }
  const HybridNet& model() const { return *model_; }
  Predictor predictor() const;

  /// Config text plus vocab_size and vocab_hash lines.
  std::string checkpoint_text() const;
  void save(const std::filesystem::path& path) const;

 private:
  TrainConfig config_;
  Vocab vocab_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<HybridNet> model_;
};

struct CheckpointMeta {
  TrainConfig config;
  std::size_t vocab_size = 0;
  std::uint64_t vocab_hash = 0;
};

CheckpointMeta parse_checkpoint_text(std::string_view text);

/// Model rebuilt from a checkpoint.
struct LoadedModel {
  CheckpointMeta meta;
  std::unique_ptr<ParamStore> store;
  std::unique_ptr<HybridNet> model;

  Predictor predictor() const;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Throws DataError naming both hashes when `vocab` is not the training vocabulary.
void check_vocab(const CheckpointMeta& meta, const Vocab& vocab);

}  // namespace hybridnet
