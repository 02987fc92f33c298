#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hybridnet/config.hpp"
#include "hybridnet/grad_check.hpp"
#include "hybridnet/metrics.hpp"
#include "hybridnet/synthdata.hpp"

namespace hybridnet {

/// Trains on <data_dir>/train with <data_dir>/vocab.txt, writing the best
/// checkpoint to `checkpoint` and appending log lines to `log_path` (when set)
/// and `echo` (when non-null).
struct TrainSummary {
  std::size_t steps = 0;
  double final_loss = 0.0;
  double best_val_cider = 0.0;
  std::size_t best_epoch = 0;
};
TrainSummary cmd_train(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& checkpoint, const std::optional<std::filesystem::path>& log_path,
                       std::ostream* echo);

enum class Task { kComplete, kGenerate };
Task parse_task(std::string_view s);

/// Predictions for every record of <data_dir>/<split>, ordered by id, written
/// in the manifest schema with "pred." ids.
void cmd_infer(Task task, const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
               const std::string& split, const std::filesystem::path& out);

/// Scores per head (indexed by DecoderKind), each a value in [0, 1] per metric.
/// Heads left empty in every prediction are absent.
struct EvalReport {
  std::vector<Metric> metrics;
  std::array<std::optional<std::map<Metric, double>>, 4> heads;
  std::size_t records = 0;
};

/// Matches "pred.<id>" rows of `pred` with rows of `ref`; throws DataError
/// listing up to five reference ids without a prediction.
EvalReport evaluate_manifests(const std::vector<ManifestRow>& pred, const std::vector<ManifestRow>& ref,
                              const std::vector<Metric>& metrics);
EvalReport cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& ref,
                    const std::vector<Metric>& metrics);

/// `key=value` lines (head.metric=score×100, one decimal) followed by an
/// aligned table.
void write_report(std::ostream& out, const EvalReport& report);

/// Rung of the toggle ladder.
struct AblationRung {
  std::string name;
  bool use_multimodal, use_multicms, use_mmha, use_crc, use_audio;
};
/// baseline, +multimodal, +multi-cms, +MMHA, +CRC, then no-audio (full model
/// without the audio stream).
const std::vector<AblationRung>& ablation_ladder();

struct AblationRow {
  std::string rung;
  /// Mean over seeds of test CIDEr / BLEU-1 per commonsense head (complete
  /// task), indexed by DecoderKind; entry 0 is the generated caption.
  std::array<double, 4> cider{};
  std::array<double, 4> bleu1{};
  /// Per-seed commonsense CIDEr averaged over the three heads.
  std::vector<double> seed_mean_cider;

  double mean_commonsense_cider() const;
};

/// Trains each requested rung (all when `rungs` is empty) for every seed.
/// Single-task rungs train one run per commonsense head and stitch the
/// predictions together.
std::vector<AblationRow> cmd_ablate(const TrainConfig& base, const std::filesystem::path& data_dir,
                                    const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& rungs,
                                    std::ostream* progress);
void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows);

enum class GradCheckTarget { kMemory, kMmha, kBlock, kModel };
const std::vector<GradCheckTarget>& grad_check_targets(std::string_view which);
std::string_view to_string(GradCheckTarget t);

/// Tiny instance: d_model 8, N 4, S 2, H 2. The model target's loss is O(10),
/// so central differences carry ~1e-10 absolute noise; pass floor >= 1e-5 to
/// judge near-zero gradients on absolute error.
GradCheckReport grad_check_target(GradCheckTarget target, const GradCheckOptions& options);

/// Teacher-forced pass over record `id` of <data_dir>/<split> through decoder
/// `kind`; writes every block's per-head A_out as whitespace-separated grids.
void cmd_dump_attn(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                   const std::string& split, const std::string& id, DecoderKind kind, const std::filesystem::path& out);

}  // namespace hybridnet
