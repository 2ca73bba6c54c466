#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedsim/checkpoint.h"
#include "fedsim/errors.h"
#include "fedsim/harness.h"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

std::string fmtd(double v) { return KvConfig::format_double(v); }

fs::path out_root() {
  if (const char* env = std::getenv("FEDSIM_OUT_ROOT")) return fs::path(env);
  return fs::path("runs");
}

void print_outcome(const RunOutcome& out) {
  std::cout << "run dir        " << out.run_dir.string() << "\n"
            << "rounds done    " << out.rounds_completed << "\n"
            << "initial ppl    " << fmtd(out.initial_ppl) << "\n"
            << "final ppl      " << fmtd(out.final_ppl) << "\n"
            << "sim seconds    " << fmtd(out.simulated_seconds) << "\n"
            << "sync events    " << out.sync_events << "\n"
            << "bytes moved    " << fmtd(out.total_bytes) << "\n";
}

// Directory-name-safe form of an override value.
std::string sanitize(const std::string& v) {
  std::string out;
  for (char c : v) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
            c == '-' || c == '_')
               ? c
               : '_';
  }
  return out.empty() ? std::string("x") : out;
}

int cmd_run(const std::string& config_path, const std::string& resume_dir,
            const std::string& out_dir, const std::vector<std::string>& sets,
            std::size_t threads) {
  if (!resume_dir.empty()) {
    if (!config_path.empty() || !sets.empty() || threads > 0) {
      throw ConfigError("--resume continues the stored config; drop --config/--set");
    }
    const fs::path dir(resume_dir);
    KvConfig cfg = KvConfig::parse_file(dir / "config.resolved");
    ExperimentSpec spec = ExperimentSpec::from_config(cfg);
    print_outcome(run_experiment(spec, dir, /*resume=*/true));
    return 0;
  }
  if (config_path.empty()) throw ConfigError("run needs --config or --resume");
  KvConfig cfg = KvConfig::parse_file(config_path);
  for (const auto& s : sets) cfg.apply_override(s);
  if (threads > 0) {
    cfg.apply_override("run.threads=" + std::to_string(threads));
  }
  ExperimentSpec spec = ExperimentSpec::from_config(cfg);
  const fs::path dir = out_dir.empty() ? out_root() / spec.name : fs::path(out_dir);
  print_outcome(run_experiment(spec, dir));
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::string& values, const std::string& out_dir) {
  if (param.find('.') == std::string::npos) {
    throw ConfigError("--param must be section.key");
  }
  std::vector<std::string> vals;
  std::string cur;
  for (char c : values) {
    if (c == ',') {
      if (!cur.empty()) vals.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) vals.push_back(cur);
  if (vals.empty()) throw ConfigError("--values must list at least one value");

  const fs::path root = out_dir.empty() ? out_root() / "sweep" : fs::path(out_dir);
  fs::create_directories(root);
  std::ofstream table(root / "sweep.csv", std::ios::trunc);
  table << "param,value,final_ppl,simulated_seconds,total_bytes,sync_events\n";
  for (const auto& v : vals) {
    KvConfig cfg = KvConfig::parse_file(config_path);
    cfg.apply_override(param + "=" + v);
    ExperimentSpec spec = ExperimentSpec::from_config(cfg);
    spec.name += "-" + sanitize(v);
    const fs::path dir = root / spec.name;
    std::cout << "=== " << param << " = " << v << " -> " << dir.string()
              << "\n";
    const RunOutcome out = run_experiment(spec, dir);
    print_outcome(out);
    table << param << "," << v << "," << fmtd(out.final_ppl) << ","
          << fmtd(out.simulated_seconds) << "," << fmtd(out.total_bytes) << ","
          << out.sync_events << "\n";
  }
  std::cout << "sweep table: " << (root / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_time_to_target(const std::string& csv, double target) {
  const auto t = time_to_target(csv, target);
  if (t) {
    std::cout << fmtd(*t) << "\n";
  } else {
    std::cout << "target " << fmtd(target) << " never reached\n";
  }
  return 0;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  std::cout << "file           " << path << "\n"
            << "round          " << ck.meta.round << "\n"
            << "entries        " << ck.params.size() << "\n"
            << "total scalars  " << ck.params.total_len() << "\n";
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& e = ck.params.entry(i);
    std::cout << "  " << e.name << "  [";
    for (std::size_t d = 0; d < e.shape.size(); ++d) {
      if (d) std::cout << "x";
      std::cout << e.shape[d];
    }
    std::cout << "]  " << e.numel() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic federated pre-training simulator"};
  app.require_subcommand(1);

  std::string config_path, resume_dir, out_dir, param, values, csv, ck_path;
  std::vector<std::string> sets;
  std::size_t threads = 0;
  double target = 0.0;

  auto* run = app.add_subcommand("run", "Execute one experiment");
  run->add_option("--config", config_path, "Experiment config file");
  run->add_option("--resume", resume_dir, "Continue a interrupted run directory");
  run->add_option("--out", out_dir, "Output directory (default FEDSIM_OUT_ROOT/name)");
  run->add_option("--set", sets, "Override, section.key=value (repeatable)");
  run->add_option("--threads", threads, "Worker threads (same results at any count)");

  auto* sweep = app.add_subcommand("sweep", "Run one config across parameter values");
  sweep->add_option("--config", config_path, "Base config file")->required();
  sweep->add_option("--param", param, "section.key to vary")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out_dir, "Sweep root directory");

  auto* ttt = app.add_subcommand("time-to-target",
                                 "Simulated seconds until eval ppl <= target");
  ttt->add_option("--csv", csv, "rounds.csv from a finished run")->required();
  ttt->add_option("--target", target, "Target perplexity")->required();

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a snapshot");
  inspect->add_option("--path", ck_path, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, resume_dir, out_dir, sets, threads);
    }
    if (sweep->parsed()) return cmd_sweep(config_path, param, values, out_dir);
    if (ttt->parsed()) return cmd_time_to_target(csv, target);
    if (inspect->parsed()) return cmd_inspect(ck_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
