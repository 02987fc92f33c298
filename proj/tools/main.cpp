#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hybridnet/commands.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/trainer.hpp"

namespace hn = hybridnet;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Defaults, then the config file, then HYBRID_SEED, then --set overrides.
hn::TrainConfig resolve_config(const std::string& file, const std::vector<std::string>& sets) {
  hn::TrainConfig cfg;
  if (!file.empty()) cfg = hn::load_config_file(file);
  hn::apply_env_overrides(cfg);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw hn::ConfigError("--set expects key=value, got '" + kv + "'");
    hn::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal captioning + commonsense generation toolkit"};
  app.require_subcommand(1);

  hn::SynthOptions synth;
  std::string out, data_dir, config_file, ckpt, log_path, split = "test", task = "complete";
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", synth.seed, "Corpus seed");
  gen->add_option("--n-train", synth.n_train, "Training records");
  gen->add_option("--n-test", synth.n_test, "Test records");
  gen->add_option("--noise", synth.noise, "Feature noise stddev");
  gen->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key = value config file");
    cmd->add_option("--set", sets, "Override a config key (key=value), repeatable");
  };

  auto* train = app.add_subcommand("train", "Train on <data>/train");
  add_config(train);
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", ckpt, "Checkpoint path")->required();
  train->add_option("--log", log_path, "Append-only training log");
  bool quiet = false;
  train->add_flag("--quiet", quiet, "Do not echo log lines to stdout");

  auto* infer = app.add_subcommand("infer", "Predict for every record of a split");
  infer->add_option("--task", task, "complete | generate")->check(CLI::IsMember({"complete", "generate"}));
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer->add_option("--data", data_dir, "Dataset directory")->required();
  infer->add_option("--split", split, "Split name");
  infer->add_option("--out", out, "Predictions TSV")->required();

  std::string pred, ref, metrics_list;
  auto* eval = app.add_subcommand("eval", "Score predictions against references");
  eval->add_option("--pred", pred, "Predictions TSV")->required();
  eval->add_option("--ref", ref, "Reference TSV")->required();
  eval->add_option("--metrics", metrics_list, "Comma list (default: all)");
  eval->add_option("--out", out, "Also write the report here");

  std::string seeds_list = "1,2,3", rungs_list;
  auto* ablate = app.add_subcommand("ablate", "Train the toggle ladder and report test scores");
  add_config(ablate);
  ablate->add_option("--data", data_dir, "Dataset directory")->required();
  ablate->add_option("--seeds", seeds_list, "Comma list of seeds");
  ablate->add_option("--rungs", rungs_list, "Comma list of rungs (default: all)");
  ablate->add_option("--out", out, "Also write the report here");

  std::string module = "all";
  hn::GradCheckOptions gc;
  gc.tol = 1e-4;
  gc.floor = 1e-5;
  auto* gradcheck = app.add_subcommand("grad-check", "Central-difference gradient check on tiny instances");
  gradcheck->add_option("--module", module, "memory | mmha | block | model | all");
  gradcheck->add_option("--eps", gc.eps, "Finite-difference step");
  gradcheck->add_option("--tol", gc.tol, "Maximum relative error");
  gradcheck->add_option("--floor", gc.floor, "Relative-error denominator floor");

  std::string record_id, decoder = "cap";
  auto* dump = app.add_subcommand("dump-attn", "Write per-head attention grids for one record");
  dump->add_option("--ckpt", ckpt, "Checkpoint")->required();
  dump->add_option("--data", data_dir, "Dataset directory")->required();
  dump->add_option("--split", split, "Split name");
  dump->add_option("--id", record_id, "Record id")->required();
  dump->add_option("--decoder", decoder, "cap | att | eff | int");
  dump->add_option("--out", out, "Output text file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      hn::gen_corpus(synth, out);
      std::cout << "wrote " << synth.n_train << " train / " << synth.n_test << " test records to " << out << '\n';
    } else if (*train) {
      const hn::TrainConfig cfg = resolve_config(config_file, sets);
      std::optional<std::filesystem::path> log;
      if (!log_path.empty()) log = log_path;
      const auto s = hn::cmd_train(cfg, data_dir, ckpt, log, quiet ? nullptr : &std::cout);
      std::cout << "best_epoch=" << s.best_epoch << " best_val_cider=" << s.best_val_cider << " checkpoint=" << ckpt
                << '\n';
    } else if (*infer) {
      hn::cmd_infer(hn::parse_task(task), ckpt, data_dir, split, out);
    } else if (*eval) {
      std::vector<hn::Metric> metrics;
      if (metrics_list.empty()) {
        metrics = hn::all_metrics();
      } else {
        for (const auto& m : split_list(metrics_list)) metrics.push_back(hn::parse_metric(m));
      }
      const auto report = hn::cmd_eval(pred, ref, metrics);
      hn::write_report(std::cout, report);
      if (!out.empty()) {
        std::ofstream os(out);
        hn::write_report(os, report);
      }
    } else if (*ablate) {
      const hn::TrainConfig cfg = resolve_config(config_file, sets);
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split_list(seeds_list)) seeds.push_back(std::stoull(s));
      const auto rows = hn::cmd_ablate(cfg, data_dir, seeds, split_list(rungs_list), &std::cerr);
      hn::write_ablation(std::cout, rows);
      if (!out.empty()) {
        std::ofstream os(out);
        hn::write_ablation(os, rows);
      }
    } else if (*gradcheck) {
      bool ok = true;
      for (auto target : hn::grad_check_targets(module)) {
        const auto r = hn::grad_check_target(target, gc);
        const bool pass = r.max_rel_err < gc.tol;
        ok = ok && pass;
        std::printf("%-7s entries=%zu max_rel_err=%.3e %s\n", std::string(hn::to_string(target)).c_str(),
                    r.entries_checked, r.max_rel_err, pass ? "PASS" : "FAIL");
      }
      return ok ? 0 : 3;
    } else if (*dump) {
      hn::cmd_dump_attn(ckpt, data_dir, split, record_id, hn::parse_decoder_kind(decoder), out);
    }
  } catch (const hn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.error_class());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
