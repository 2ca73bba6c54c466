#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/aggregator.h"
#include "fedsim/baselines.h"
#include "fedsim/config.h"
#include "fedsim/cost_model.h"

namespace fedsim {

enum class RunMode { kFederated, kCentralized };

// Fully resolved description of one experiment.  Everything a run needs is
// in here; reruns from the serialized form are bit-identical.
struct ExperimentSpec {
  std::string name = "run";
  RunMode mode = RunMode::kFederated;
  std::uint64_t seed = 42;        // sampling + data streams
  std::uint64_t model_seed = 1;   // parameter init
  std::uint64_t data_seed = 7;    // corpus generation + sharding
  std::size_t threads = 1;
  std::size_t eval_every = 1;     // rounds (federated) or steps (centralized)
  std::size_t eval_sequences = 64;
  std::size_t eval_batch = 8;
  bool client_checkpoints = false;
  std::size_t checkpoint_every = 0;  // centralized steps per snapshot; 0: auto

  ModelConfig model;

  // data
  ShardPlan::Policy data_policy = ShardPlan::Policy::kIid;
  std::string style = "web";                  // iid corpus style
  std::vector<std::string> styles;            // by-source styles
  std::size_t corpus_tokens = 200000;         // iid total / per source
  std::size_t clients_per_source = 1;

  // federation
  std::size_t population = 4;
  double participation = 1.0;
  std::size_t clients_per_round = 0;  // 0: derived from participation
  std::size_t rounds = 10;
  std::size_t local_steps = 16;
  std::size_t batch_size = 8;
  Topology topology = Topology::kRingAllReduce;

  LrSchedule schedule;
  AdamWConfig adamw;
  ClientOptKind client_opt = ClientOptKind::kAdamW;
  double sgd_clip_norm = 0.0;

  ServerOptConfig server_opt;

  CostModelParams cost;     // payload_mb 0 means "derive from model"
  std::string bandwidth_matrix_file;
  std::vector<std::size_t> ring_order;

  PostProcessPolicy post;

  // centralized mode
  std::size_t n_workers = 1;
  std::size_t global_batch = 8;
  std::size_t total_steps = 100;
  std::size_t opt_reset_interval = 0;

  void validate() const;
  std::size_t effective_clients_per_round() const;
  double effective_payload_mb() const;

  static ExperimentSpec from_config(const KvConfig& cfg);  // strict: unknown keys fail
  KvConfig to_config() const;                              // canonical resolved form
};

struct RunOutcome {
  std::filesystem::path run_dir;
  double initial_ppl = 0.0;
  double final_ppl = 0.0;
  std::size_t rounds_completed = 0;   // steps for centralized mode
  std::uint64_t sync_events = 0;
  double total_bytes = 0.0;
  double simulated_seconds = 0.0;
  ParamVector theta;
};

// Executes the spec into out_dir: rounds.csv, config.resolved, checkpoint.phck,
// state files, summary.json.  With resume=true, out_dir must hold a previous
// partial run; it continues from the last checkpoint and the result is
// bit-identical to an uninterrupted run.
// `halt_after` (testing hook) stops the loop after that many rounds/steps of
// this invocation, leaving the directory exactly as an interrupted run would.
RunOutcome run_experiment(const ExperimentSpec& spec,
                          const std::filesystem::path& out_dir,
                          bool resume = false, std::size_t halt_after = 0);

// First CSV row whose eval perplexity is <= target -> its cumulative
// simulated seconds; nullopt when the target is never reached.
std::optional<double> time_to_target(const std::filesystem::path& rounds_csv,
                                     double target_ppl);

// The rounds.csv column set, fixed and documented.
extern const char* const kRoundsCsvHeader;

}  // namespace fedsim
