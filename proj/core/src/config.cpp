#include "hybridnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hybridnet/error.hpp"

namespace hybridnet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true|false, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(TrainConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field size_field(T TrainConfig::*m) {
  return {[m](TrainConfig& c, std::string_view k, std::string_view v) { c.*m = static_cast<T>(parse_u64(k, v)); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}

template <typename T>
Field model_size_field(T ModelConfig::*m) {
  return {[m](TrainConfig& c, std::string_view k, std::string_view v) {
            c.model.*m = static_cast<T>(parse_u64(k, v));
          },
          [m](const TrainConfig& c) { return std::to_string(c.model.*m); }};
}

Field model_bool_field(bool ModelConfig::*m) {
  return {[m](TrainConfig& c, std::string_view k, std::string_view v) { c.model.*m = parse_bool(k, v); },
          [m](const TrainConfig& c) { return std::string(c.model.*m ? "true" : "false"); }};
}

Field coeff_field(double MergeCoefficients::*m) {
  return {[m](TrainConfig& c, std::string_view k, std::string_view v) { c.model.coeffs.*m = parse_double(k, v); },
          [m](const TrainConfig& c) { return fmt_double(c.model.coeffs.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> kFields = {
      {"d_model", model_size_field(&ModelConfig::d_model)},
      {"n_blocks", model_size_field(&ModelConfig::n_blocks)},
      {"n_heads", model_size_field(&ModelConfig::n_heads)},
      {"d_ff", model_size_field(&ModelConfig::d_ff)},
      {"dropout",
       {[](TrainConfig& c, std::string_view k, std::string_view v) { c.model.dropout = parse_double(k, v); },
        [](const TrainConfig& c) { return fmt_double(c.model.dropout); }}},
      {"mem_slots", model_size_field(&ModelConfig::mem_slots)},
      {"alpha", coeff_field(&MergeCoefficients::alpha)},
      {"beta", coeff_field(&MergeCoefficients::beta)},
      {"gamma", coeff_field(&MergeCoefficients::gamma)},
      {"use_mmha", model_bool_field(&ModelConfig::use_mmha)},
      {"use_crc", model_bool_field(&ModelConfig::use_crc)},
      {"use_multimodal", model_bool_field(&ModelConfig::use_multimodal)},
      {"use_multicms", model_bool_field(&ModelConfig::use_multicms)},
      {"use_audio", model_bool_field(&ModelConfig::use_audio)},
      {"single_kind",
       {[](TrainConfig& c, std::string_view, std::string_view v) { c.model.single_kind = parse_decoder_kind(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.model.single_kind)); }}},
      {"pooling",
       {[](TrainConfig& c, std::string_view, std::string_view v) { c.model.pooling = parse_pooling(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.model.pooling)); }}},
      {"fusion",
       {[](TrainConfig& c, std::string_view, std::string_view v) { c.model.fusion = parse_fusion(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.model.fusion)); }}},
      {"motion_dim", model_size_field(&ModelConfig::motion_dim)},
      {"audio_dim", model_size_field(&ModelConfig::audio_dim)},
      {"appearance_dim", model_size_field(&ModelConfig::appearance_dim)},
      {"max_seq_len", model_size_field(&ModelConfig::max_seq_len)},
      {"lr",
       {[](TrainConfig& c, std::string_view k, std::string_view v) { c.lr = parse_double(k, v); },
        [](const TrainConfig& c) { return fmt_double(c.lr); }}},
      {"warmup_steps", size_field(&TrainConfig::warmup_steps)},
      {"batch_size", size_field(&TrainConfig::batch_size)},
      {"epochs", size_field(&TrainConfig::epochs)},
      {"max_steps", size_field(&TrainConfig::max_steps)},
      {"seed", size_field(&TrainConfig::seed)},
      {"max_len_caption", size_field(&TrainConfig::max_len_caption)},
      {"max_len_commonsense", size_field(&TrainConfig::max_len_commonsense)},
      {"val_fraction",
       {[](TrainConfig& c, std::string_view k, std::string_view v) { c.val_fraction = parse_double(k, v); },
        [](const TrainConfig& c) { return fmt_double(c.val_fraction); }}},
      {"eval_every", size_field(&TrainConfig::eval_every)},
      {"threads", size_field(&TrainConfig::threads)},
  };
  return kFields;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (max_len_caption == 0 || max_len_commonsense == 0) throw ConfigError("max lengths must be positive");
  if (max_len_caption + 1 > model.max_seq_len || max_len_commonsense > model.max_seq_len) {
    throw ConfigError("decode lengths must fit within max_seq_len");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return kKeys;
}

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  field(key).set(cfg, key, trim(value));
}

std::string get_config_value(const TrainConfig& cfg, std::string_view key) { return field(key).get(cfg); }

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
  return out;
}

void apply_env_overrides(TrainConfig& cfg) {
  if (const char* s = std::getenv("HYBRID_SEED"); s && *s) {
    cfg.seed = parse_u64("HYBRID_SEED", s);
  }
}

}  // namespace hybridnet
