#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hybridnet/model_config.hpp"

namespace hybridnet {

/// Everything a training run needs besides the data. Defaults are scaled for
/// the synthetic corpus; the full-scale values are noted in the README.
struct TrainConfig {
  ModelConfig model;
  double lr = 5e-4;
  std::size_t warmup_steps = 200;
  std::size_t batch_size = 16;
  std::size_t epochs = 300;
  /// Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;
  std::uint64_t seed = 1;
  std::size_t max_len_caption = 12;
  std::size_t max_len_commonsense = 10;
  /// Share of the training split held out for checkpoint selection.
  double val_fraction = 0.1;
  /// Validation every this many epochs (the final epoch is always validated).
  std::size_t eval_every = 1;
  /// Gradient shards per minibatch; 1 keeps the run single-threaded.
  std::size_t threads = 1;

  void validate() const;
};

/// Recognised keys, in the order format_config writes them.
const std::vector<std::string>& config_keys();

/// Sets one key from its text form. Throws ConfigError for unknown keys or
/// unparsable values.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const TrainConfig& cfg, std::string_view key);

/// Parses `key = value` lines over `base`. `#` starts a comment; blank lines
/// are ignored. Errors name the line.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

/// One `key = value` line per key; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& cfg);

/// Applies HYBRID_SEED when it is set.
void apply_env_overrides(TrainConfig& cfg);

}  // namespace hybridnet
