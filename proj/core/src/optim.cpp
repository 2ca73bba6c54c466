#include "fedsim/optim.h"

#include <cmath>
#include <string>

#include "fedsim/errors.h"

namespace fedsim {

void LrSchedule::validate() const {
  if (!(eta_max > 0.0)) throw ConfigError("schedule: eta_max must be > 0");
  if (decay_steps == 0) throw ConfigError("schedule: decay_steps must be >= 1");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("schedule: alpha in [0,1]");
}

double lr_at(const LrSchedule& s, std::size_t step) {
  s.validate();
  if (s.warmup_steps > 0 && step < s.warmup_steps) {
    return s.eta_max * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  }
  double p = static_cast<double>(step - s.warmup_steps) /
             static_cast<double>(s.decay_steps);
  if (p > 1.0) p = 1.0;
  const double lo = s.eta_min();
  return lo + (s.eta_max - lo) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * p));
}

void AdamWConfig::validate() const {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adamw: betas must be in [0,1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
}

AdamWState AdamWState::fresh(const AdamWConfig& cfg, const ParamVector& like) {
  cfg.validate();
  AdamWState s;
  s.cfg = cfg;
  s.m = like.zeros_like();
  s.v = like.zeros_like();
  s.step_count = 0;
  return s;
}

namespace {

// Returns the factor that rescales grads to the clip norm (1.0 when inside).
double clip_factor(const ParamVector& grads, double clip_norm) {
  const double norm = grads.global_norm();
  if (!std::isfinite(norm)) {
    throw NumericError("gradient norm is not finite");
  }
  if (clip_norm > 0.0 && norm > clip_norm) return clip_norm / norm;
  return 1.0;
}

}  // namespace

void adamw_step(ParamVector& params, const ParamVector& grads, AdamWState& state,
                double lr) {
  params.check_combinable(grads);
  params.check_combinable(state.m);
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("adamw: lr must be finite and >= 0");
  }
  const double cf = clip_factor(grads, state.cfg.clip_norm);
  state.step_count += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 =
      1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 =
      1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params.entry(i).values;
    const auto& g = *grads.entry(i).values;
    auto& m = *state.m.entry(i).values;
    auto& v = *state.v.entry(i).values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * cf;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + state.cfg.eps) +
                    state.cfg.weight_decay * p[j]);
    }
  }
}

void sgd_step(ParamVector& params, const ParamVector& grads, double lr,
              double clip_norm) {
  params.check_combinable(grads);
  const double cf = clip_factor(grads, clip_norm);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params.entry(i).values;
    const auto& g = *grads.entry(i).values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= lr * (g[j] * cf);
    }
  }
}

void ServerOptConfig::validate() const {
  if (!(eta > 0.0)) throw ConfigError("server opt: eta must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("server opt: momentum must be in [0,1)");
  }
  if (kind == ServerOptKind::FedAvg && (eta != 1.0 || momentum != 0.0)) {
    throw ConfigError("server opt: fedavg is eta=1, momentum=0 by definition");
  }
}

ServerOptState ServerOptState::init(const ServerOptConfig& cfg,
                                    const ParamVector& like) {
  cfg.validate();
  ServerOptState s;
  s.cfg = cfg;
  s.velocity = like.zeros_like();
  return s;
}

ParamVector server_step(ServerOptState& state, const ParamVector& theta,
                        const ParamVector& delta, const ParamVector& client_mean) {
  theta.check_combinable(delta);
  theta.check_combinable(client_mean);
  const auto& cfg = state.cfg;
  if (cfg.kind == ServerOptKind::FedAvg) {
    // theta - delta would reconstruct the mean only up to rounding; return
    // the mean itself so "new theta == client average" holds exactly.
    return client_mean.clone();
  }
  theta.check_combinable(state.velocity);
  const double mu = cfg.momentum;
  for (std::size_t i = 0; i < state.velocity.size(); ++i) {
    auto& vel = *state.velocity.entry(i).values;
    const auto& dl = *delta.entry(i).values;
    for (std::size_t j = 0; j < vel.size(); ++j) {
      vel[j] = mu * vel[j] + dl[j];
    }
  }
  if (cfg.eta == 1.0 && mu == 0.0) {
    // Degenerate momentum is definitionally plain averaging; take the exact
    // path so the two configurations produce identical bytes.
    return client_mean.clone();
  }
  ParamVector next = theta.clone();
  for (std::size_t i = 0; i < next.size(); ++i) {
    auto& th = *next.entry(i).values;
    const auto& dl = *delta.entry(i).values;
    const auto& vel = *state.velocity.entry(i).values;
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double dir = cfg.nesterov ? mu * vel[j] + dl[j] : vel[j];
      th[j] -= cfg.eta * dir;
    }
  }
  return next;
}

std::size_t compute_schedule_period(std::size_t param_count,
                                    std::size_t tokens_per_step) {
  if (param_count == 0 || tokens_per_step == 0) {
    throw ConfigError("schedule period: param_count and tokens_per_step must be > 0");
  }
  const std::uint64_t tokens = 20ULL * static_cast<std::uint64_t>(param_count);
  return static_cast<std::size_t>(
      (tokens + tokens_per_step - 1) / tokens_per_step);
}

}  // namespace fedsim
