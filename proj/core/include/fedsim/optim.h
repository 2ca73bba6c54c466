#pragma once

#include <cstdint>

#include "fedsim/param_vector.h"

namespace fedsim {

// Linear warmup to eta_max, cosine decay to eta_min = alpha * eta_max over
// decay_steps, constant eta_min afterwards.  Indexed by the sequential step
// count, so runs that take the same number of sequential steps see the same
// curve regardless of how those steps are grouped into rounds.
struct LrSchedule {
  double eta_max = 6e-4;
  std::size_t warmup_steps = 64;
  std::size_t decay_steps = 1024;
  double alpha = 0.1;

  double eta_min() const { return alpha * eta_max; }
  void validate() const;
};

double lr_at(const LrSchedule& s, std::size_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables

  void validate() const;
};

// Moment buffers; step_count feeds bias correction.
struct AdamWState {
  AdamWConfig cfg;
  ParamVector m;
  ParamVector v;
  std::size_t step_count = 0;

  static AdamWState fresh(const AdamWConfig& cfg, const ParamVector& like);
};

// Clip -> moments -> bias correction -> decoupled weight decay, all in
// canonical order.  Non-finite gradient norm raises NumericError.
void adamw_step(ParamVector& params, const ParamVector& grads, AdamWState& state,
                double lr);

// Plain SGD with the same global-norm clip convention (clip_norm <= 0: off).
void sgd_step(ParamVector& params, const ParamVector& grads, double lr,
              double clip_norm = 0.0);

enum class ServerOptKind { FedAvg, FedMomentum };

struct ServerOptConfig {
  ServerOptKind kind = ServerOptKind::FedAvg;
  double eta = 1.0;        // server learning rate
  double momentum = 0.0;   // mu
  bool nesterov = false;

  void validate() const;
};

struct ServerOptState {
  ServerOptConfig cfg;
  ParamVector velocity;

  static ServerOptState init(const ServerOptConfig& cfg, const ParamVector& like);
};

// One outer step.  `delta` is the pseudo-gradient theta - mean(client thetas);
// `client_mean` is that mean itself.  Plain FedAvg (eta=1, mu=0) returns the
// canonical client mean directly rather than theta - delta, so the averaging
// invariants hold bit-for-bit; the momentum path applies
//   v <- mu*v + delta;  dir <- nesterov ? mu*v + delta : v;  theta <- theta - eta*dir.
ParamVector server_step(ServerOptState& state, const ParamVector& theta,
                        const ParamVector& delta, const ParamVector& client_mean);

// Outer rounds between full schedule refreshes: ceil(20 * |params| tokens /
// tokens_per_step).  Zero inputs are ConfigError.
std::size_t compute_schedule_period(std::size_t param_count,
                                    std::size_t tokens_per_step);

}  // namespace fedsim
