#include "fedsim/aggregator.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

#include "fedsim/checkpoint.h"
#include "fedsim/errors.h"
#include "fedsim/rng.h"

namespace fedsim {

void FederationConfig::validate() const {
  if (population < 1) throw ConfigError("federation: population must be >= 1");
  if (clients_per_round < 1 || clients_per_round > population) {
    throw ConfigError("federation: need 1 <= K <= P");
  }
  if (rounds < 1) throw ConfigError("federation: rounds must be >= 1");
}

std::vector<std::size_t> sample_clients(std::size_t population, std::size_t k,
                                        std::uint64_t seed, std::size_t round) {
  if (k > population) throw ConfigError("sample_clients: K > P");
  if (k == 0) throw ConfigError("sample_clients: K must be >= 1");
  std::vector<std::size_t> ids(population);
  for (std::size_t i = 0; i < population; ++i) ids[i] = i;
  Rng rng(mix_seed(seed, 0x53616d70ULL, round));
  // partial Fisher-Yates: the first k slots become the sample
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(
                                  rng.uniform_u64(population - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ParamVector compute_pseudo_gradient(const ParamVector& theta,
                                    const std::vector<const ParamVector*>& models) {
  if (models.empty()) throw UsageError("pseudo-gradient of zero client models");
  for (const auto* m : models) theta.check_combinable(*m);
  return ParamVector::sub(theta, ParamVector::mean(models));
}

FederationRunner::FederationRunner(FederationConfig fed, LocalTrainConfig local,
                                   ServerOptConfig server, CostModelParams cost,
                                   std::shared_ptr<const ShardPlan> plan,
                                   ParamVector theta0, RunnerOptions opts)
    : fed_(fed),
      local_(local),
      cost_(cost),
      plan_(std::move(plan)),
      opts_(std::move(opts)),
      theta_(std::move(theta0)),
      server_state_(ServerOptState::init(server, theta_)) {
  fed_.validate();
  local_.model.validate();
  if (!plan_) throw UsageError("runner: null shard plan");
  if (plan_->n_clients() < fed_.population) {
    throw ConfigError("shard plan covers " + std::to_string(plan_->n_clients()) +
                      " clients, federation needs " +
                      std::to_string(fed_.population));
  }
  if (opts_.n_threads < 1) opts_.n_threads = 1;
  cursors_.assign(fed_.population, 0);
}

std::uint64_t FederationRunner::client_cursor(std::size_t client) const {
  if (client >= cursors_.size()) throw LookupError("unknown client id");
  return cursors_[client];
}

void FederationRunner::restore(ParamVector theta, ParamVector velocity,
                               std::size_t next_round, double t_cum,
                               const std::vector<std::uint64_t>& cursors) {
  theta_.check_combinable(theta);
  server_state_.velocity.check_combinable(velocity);
  if (cursors.size() != cursors_.size()) {
    throw UsageError("restore: cursor vector has wrong length");
  }
  theta_ = std::move(theta);
  server_state_.velocity = std::move(velocity);
  next_round_ = next_round;
  t_cum_ = t_cum;
  cursors_ = cursors;
}

RoundRecord FederationRunner::run_round() {
  if (done()) throw UsageError("run_round called after the final round");
  const std::size_t round = next_round_;
  const auto sampled =
      sample_clients(fed_.population, fed_.clients_per_round, fed_.seed, round);

  struct Slot {
    bool dropped = false;
    ClientResult result;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(sampled.size());
  const std::size_t step_base = round * local_.local_steps;

  auto run_client = [&](std::size_t si) {
    const std::size_t client = sampled[si];
    Slot& slot = slots[si];
    slot.dropped = opts_.dropouts.count({round, client}) > 0;
    try {
      BatchStream stream(plan_, client, local_.batch_size, plan_->seq_len(),
                         stream_seed(fed_.seed, client), cursors_[client]);
      slot.result = run_local_round(theta_, stream, local_, round, client,
                                    step_base);
    } catch (...) {
      slot.error = std::current_exception();
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(opts_.n_threads, sampled.size());
  if (workers <= 1) {
    for (std::size_t si = 0; si < sampled.size(); ++si) run_client(si);
  } else {
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t si = cursor.fetch_add(1);
          if (si >= sampled.size()) return;
          run_client(si);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Errors surface in ascending client order, independent of scheduling.
  for (std::size_t si = 0; si < sampled.size(); ++si) {
    if (slots[si].error) std::rethrow_exception(slots[si].error);
  }

  // A dropped client trains (and its data cursor advances) but never reports.
  std::vector<const ParamVector*> survivor_models;
  std::vector<const ClientResult*> survivors;
  for (std::size_t si = 0; si < sampled.size(); ++si) {
    cursors_[sampled[si]] = slots[si].result.cursor;
    if (!slots[si].dropped) {
      survivor_models.push_back(&slots[si].result.theta);
      survivors.push_back(&slots[si].result);
    }
  }
  if (survivors.empty()) {
    throw RoundFailureError("round " + std::to_string(round) +
                            ": no surviving clients");
  }
  if (survivors.size() < sampled.size() &&
      fed_.topology == Topology::kRingAllReduce) {
    throw RoundFailureError("round " + std::to_string(round) +
                            ": ring all-reduce cannot tolerate dropouts");
  }

  if (!opts_.client_checkpoint_dir.empty()) {
    for (std::size_t si = 0; si < sampled.size(); ++si) {
      const std::size_t client = sampled[si];
      write_client_checkpoint(
          opts_.client_checkpoint_dir /
              ("client_r" + std::to_string(round) + "_c" +
               std::to_string(client) + ".phck"),
          slots[si].result.theta, round, slots[si].result.cursor);
    }
  }

  const ParamVector client_mean = ParamVector::mean(survivor_models);
  const ParamVector delta = ParamVector::sub(theta_, client_mean);
  theta_ = server_step(server_state_, theta_, delta, client_mean);

  RoundRecord rec;
  rec.round = round;
  rec.sampled_ids = sampled;
  rec.min_client_loss = std::numeric_limits<double>::infinity();
  rec.max_client_loss = -std::numeric_limits<double>::infinity();
  double loss_acc = 0.0;
  for (const ClientResult* r : survivors) {
    const double l = r->mean_loss();
    loss_acc += l;
    rec.min_client_loss = std::min(rec.min_client_loss, l);
    rec.max_client_loss = std::max(rec.max_client_loss, l);
  }
  rec.mean_client_loss = loss_acc / static_cast<double>(survivors.size());

  const std::size_t k = sampled.size();
  rec.t_local_s = local_time(local_.local_steps, cost_.throughput_bps);
  rec.t_comm_s = comm_time(fed_.topology, k, cost_.payload_mb, cost_.bandwidth_mbps);
  rec.t_agg_s = agg_time(k, cost_.payload_mb, cost_.server_flops);
  const double bytes = bytes_per_round(fed_.topology, k, cost_.payload_mb);
  rec.bytes_up = bytes / 2.0;
  rec.bytes_down = bytes / 2.0;
  t_cum_ += rec.t_local_s + rec.t_comm_s;
  rec.t_cum_s = t_cum_;

  next_round_ = round + 1;

  rec.eval_ppl = std::numeric_limits<double>::quiet_NaN();
  if (opts_.eval_fn && opts_.eval_every > 0 &&
      (round % opts_.eval_every == opts_.eval_every - 1 ||
       next_round_ == fed_.rounds)) {
    rec.eval_ppl = opts_.eval_fn(theta_);
  }

  if (!opts_.checkpoint_path.empty()) {
    CheckpointMeta meta;
    meta.round = next_round_;
    write_checkpoint(opts_.checkpoint_path, theta_, meta);
  }
  return rec;
}

}  // namespace fedsim
