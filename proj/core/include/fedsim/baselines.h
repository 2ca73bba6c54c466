#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "fedsim/client.h"
#include "fedsim/data.h"
#include "fedsim/optim.h"

namespace fedsim {

// Simulated data-parallel run: per step every worker computes its shard
// gradient, the gradients are averaged in ascending worker order, and one
// shared optimizer update is applied.  Mathematically a single-process
// large-batch trainer; also the per-step sync-event counterpart for the cost
// model.
struct CentralizedConfig {
  ModelConfig model;
  AdamWConfig adamw;
  LrSchedule schedule;
  ClientOptKind opt = ClientOptKind::kAdamW;
  double sgd_clip_norm = 0.0;
  std::size_t n_workers = 1;
  std::size_t global_batch = 8;   // must divide by n_workers
  std::size_t total_steps = 1;
  // Reset optimizer state every N steps (0 = never).  Aligning this with a
  // federation's tau makes the K=1 comparison exact, since clients are
  // stateless across rounds.
  std::size_t opt_reset_interval = 0;
  double throughput_bps = 2.0;

  void validate() const;
};

struct CentralizedResult {
  ParamVector theta;
  std::vector<StepMetric> steps;    // loss = mean worker loss per step
  std::uint64_t sync_events = 0;    // one per step when n_workers > 1
  std::vector<std::uint64_t> cursors;
};

// Observer runs after every optimizer step (step index, current params).
using StepObserver = std::function<void(std::size_t, const ParamVector&)>;

CentralizedResult run_centralized(const CentralizedConfig& cfg,
                                  std::shared_ptr<const ShardPlan> plan,
                                  std::uint64_t seed, const ParamVector& theta0,
                                  std::size_t n_threads = 1,
                                  const StepObserver& observer = {});

// DiLoCo's outer optimizer: Nesterov momentum on the pseudo-gradient with
// eta = 0.1.  The momentum coefficient is configurable: 0.9 by default, with
// 0.7 the documented alternative tuning.
ServerOptConfig diloco_server_opt(double momentum = 0.9);

}  // namespace fedsim
