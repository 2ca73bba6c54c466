#include "fedsim/baselines.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "fedsim/errors.h"

namespace fedsim {

void CentralizedConfig::validate() const {
  model.validate();
  adamw.validate();
  schedule.validate();
  if (n_workers < 1) throw ConfigError("centralized: n_workers must be >= 1");
  if (global_batch < 1 || global_batch % n_workers != 0) {
    throw ConfigError("centralized: global batch must divide by n_workers");
  }
  if (total_steps < 1) throw ConfigError("centralized: total_steps must be >= 1");
  if (!(throughput_bps > 0.0)) throw ConfigError("centralized: nu must be > 0");
}

CentralizedResult run_centralized(const CentralizedConfig& cfg,
                                  std::shared_ptr<const ShardPlan> plan,
                                  std::uint64_t seed, const ParamVector& theta0,
                                  std::size_t n_threads,
                                  const StepObserver& observer) {
  cfg.validate();
  if (!plan) throw UsageError("centralized: null shard plan");
  if (plan->n_clients() < cfg.n_workers) {
    throw ConfigError("shard plan covers " + std::to_string(plan->n_clients()) +
                      " shards, run needs " + std::to_string(cfg.n_workers));
  }
  const TransformerModel model(cfg.model);
  const std::size_t per_worker = cfg.global_batch / cfg.n_workers;

  std::vector<BatchStream> streams;
  streams.reserve(cfg.n_workers);
  for (std::size_t w = 0; w < cfg.n_workers; ++w) {
    streams.emplace_back(plan, w, per_worker, plan->seq_len(),
                         stream_seed(seed, w));
  }

  CentralizedResult res;
  res.theta = theta0.clone();
  res.steps.reserve(cfg.total_steps);

  AdamWState opt = AdamWState::fresh(cfg.adamw, res.theta);
  const double step_seconds = 1.0 / cfg.throughput_bps;
  if (n_threads < 1) n_threads = 1;

  std::vector<ParamVector> worker_grads(cfg.n_workers);
  std::vector<double> worker_loss(cfg.n_workers, 0.0);
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    if (cfg.opt_reset_interval > 0 && t % cfg.opt_reset_interval == 0) {
      opt = AdamWState::fresh(cfg.adamw, res.theta);
    }
    // Batches are drawn on the coordinator so stream state never depends on
    // worker scheduling.
    std::vector<Batch> batches;
    batches.reserve(cfg.n_workers);
    for (std::size_t w = 0; w < cfg.n_workers; ++w) {
      batches.push_back(streams[w].next());
    }

    auto run_worker = [&](std::size_t w) {
      ForwardResult fwd = model.forward_loss(res.theta, batches[w]);
      worker_loss[w] = fwd.loss.item();
      backward(fwd.loss);
      worker_grads[w] = model.collect_grads(fwd);
    };
    const std::size_t workers = std::min<std::size_t>(n_threads, cfg.n_workers);
    if (workers <= 1) {
      for (std::size_t w = 0; w < cfg.n_workers; ++w) run_worker(w);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(cfg.n_workers);
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t i = 0; i < workers; ++i) {
        pool.emplace_back([&] {
          while (true) {
            const std::size_t w = next.fetch_add(1);
            if (w >= cfg.n_workers) return;
            try {
              run_worker(w);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    double loss = 0.0;
    for (std::size_t w = 0; w < cfg.n_workers; ++w) loss += worker_loss[w];
    loss /= static_cast<double>(cfg.n_workers);
    if (!std::isfinite(loss)) {
      throw DivergenceError("centralized run diverged at step " + std::to_string(t),
                            0, 0, t);
    }

    std::vector<const ParamVector*> grad_ptrs;
    grad_ptrs.reserve(cfg.n_workers);
    for (const auto& g : worker_grads) grad_ptrs.push_back(&g);
    const ParamVector grad = ParamVector::mean(grad_ptrs);

    const double lr = lr_at(cfg.schedule, t);
    if (cfg.opt == ClientOptKind::kAdamW) {
      adamw_step(res.theta, grad, opt, lr);
    } else {
      sgd_step(res.theta, grad, lr, cfg.sgd_clip_norm);
    }
    res.steps.push_back(
        StepMetric{loss, cfg.global_batch * plan->seq_len(), step_seconds});
    if (observer) observer(t, res.theta);
  }
  if (cfg.n_workers > 1) res.sync_events = cfg.total_steps;
  for (auto& s : streams) res.cursors.push_back(s.cursor());
  return res;
}

ServerOptConfig diloco_server_opt(double momentum) {
  ServerOptConfig cfg;
  cfg.kind = ServerOptKind::FedMomentum;
  cfg.eta = 0.1;
  cfg.momentum = momentum;
  cfg.nesterov = true;
  return cfg;
}

}  // namespace fedsim
