#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "fedsim/client.h"
#include "fedsim/cost_model.h"
#include "fedsim/data.h"
#include "fedsim/optim.h"

namespace fedsim {

struct FederationConfig {
  std::size_t population = 1;       // P
  std::size_t clients_per_round = 1;  // K
  std::size_t rounds = 1;           // T
  Topology topology = Topology::kRingAllReduce;
  std::uint64_t seed = 0;

  void validate() const;
};

// Uniform sample without replacement, deterministic under (seed, round),
// returned ascending (the canonical aggregation order).
std::vector<std::size_t> sample_clients(std::size_t population, std::size_t k,
                                        std::uint64_t seed, std::size_t round);

// delta = theta - mean(client models), mean taken in the given (ascending
// client id) order.
ParamVector compute_pseudo_gradient(const ParamVector& theta,
                                    const std::vector<const ParamVector*>& models);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> sampled_ids;
  double mean_client_loss = 0.0;
  double min_client_loss = 0.0;
  double max_client_loss = 0.0;
  double eval_ppl = 0.0;  // NaN when evaluation was skipped this round
  double t_local_s = 0.0;
  double t_comm_s = 0.0;
  double t_agg_s = 0.0;
  double t_cum_s = 0.0;   // cumulative T_round = T_L + T_C (T_agg excluded)
  double bytes_up = 0.0;
  double bytes_down = 0.0;

  double bytes_round() const { return bytes_up + bytes_down; }
};

struct RunnerOptions {
  std::size_t n_threads = 1;
  std::size_t eval_every = 1;  // 0 disables in-run evaluation
  std::function<double(const ParamVector&)> eval_fn;
  // Simulated dropouts: a (round, client) listed here trains but never
  // reports.  PS/AR aggregate the survivors; RAR cannot and fails the round.
  std::set<std::pair<std::size_t, std::size_t>> dropouts;
  std::filesystem::path checkpoint_path;   // empty: no round checkpointing
  std::filesystem::path client_checkpoint_dir;  // empty: no client snapshots
};

// The outer loop: sample clients, run them (possibly on several threads),
// fold their models into a pseudo-gradient, take a server step, account
// simulated costs, checkpoint.  Everything downstream of (configs, seed,
// theta0) is deterministic, including across thread counts.
class FederationRunner {
 public:
  FederationRunner(FederationConfig fed, LocalTrainConfig local,
                   ServerOptConfig server, CostModelParams cost,
                   std::shared_ptr<const ShardPlan> plan, ParamVector theta0,
                   RunnerOptions opts);

  RoundRecord run_round();  // executes round `next_round()`
  bool done() const { return next_round_ >= fed_.rounds; }
  std::size_t next_round() const { return next_round_; }

  const ParamVector& theta() const { return theta_; }
  const ServerOptState& server_state() const { return server_state_; }
  const FederationConfig& federation() const { return fed_; }
  double cumulative_seconds() const { return t_cum_; }
  std::uint64_t client_cursor(std::size_t client) const;

  // Resume support: overwrite the evolving state with checkpointed values.
  void restore(ParamVector theta, ParamVector velocity, std::size_t next_round,
               double t_cum, const std::vector<std::uint64_t>& cursors);

 private:
  FederationConfig fed_;
  LocalTrainConfig local_;
  CostModelParams cost_;
  std::shared_ptr<const ShardPlan> plan_;
  RunnerOptions opts_;
  ParamVector theta_;
  ServerOptState server_state_;
  std::vector<std::uint64_t> cursors_;  // per population client
  std::size_t next_round_ = 0;
  double t_cum_ = 0.0;
};

}  // namespace fedsim
