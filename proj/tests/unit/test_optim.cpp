#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "fedsim/errors.h"
#include "fedsim/optim.h"
#include "fedsim/param_vector.h"

using namespace fedsim;

namespace {

ParamVector single(double v) {
  ParamVector pv;
  pv.add("w", Shape{1}, {v});
  return pv;
}

ParamVector pair2(double a, double b) {
  ParamVector pv;
  pv.add("w", Shape{2}, {a, b});
  return pv;
}

double elem(const ParamVector& pv, std::size_t i) {
  return (*pv.at("w").values)[i];
}

bool bits_equal(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entry(i);
    const auto& eb = b.entry(i);
    if (ea.numel() != eb.numel()) return false;
    if (std::memcmp(ea.values->data(), eb.values->data(),
                    ea.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("schedule: warmup, cosine, floor") {
  LrSchedule s;
  s.eta_max = 1e-2;
  s.warmup_steps = 10;
  s.decay_steps = 100;
  s.alpha = 0.1;
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 5) == doctest::Approx(5e-3).epsilon(1e-14));
  CHECK(lr_at(s, 10) == doctest::Approx(1e-2).epsilon(1e-14));
  // halfway through decay: eta_min + (eta_max - eta_min)/2
  CHECK(lr_at(s, 60) == doctest::Approx(5.5e-3).epsilon(1e-12));
  CHECK(lr_at(s, 110) == doctest::Approx(1e-3).epsilon(1e-12));
  // past the horizon the floor holds
  CHECK(lr_at(s, 200) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(s, 100000) == doctest::Approx(1e-3).epsilon(1e-12));
  // monotone up through warmup, non-increasing through decay
  for (std::size_t t = 1; t <= 10; ++t) CHECK(lr_at(s, t) > lr_at(s, t - 1));
  for (std::size_t t = 11; t <= 110; ++t) CHECK(lr_at(s, t) <= lr_at(s, t - 1));

  LrSchedule bad = s;
  bad.eta_max = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.decay_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adamw: first step from zero state") {
  // theta0 = 0, g = 1, lr = 0.1, defaults. After bias correction both moment
  // estimates are ~1, so the step is ~ -lr; the pinned double replays
  // clip -> moments -> correction -> update in the documented order.
  ParamVector theta = single(0.0);
  ParamVector g = single(1.0);
  AdamWState st = AdamWState::fresh(AdamWConfig{}, theta);
  adamw_step(theta, g, st, 0.1);
  CHECK(st.step_count == 1);
  CHECK(elem(theta, 0) == doctest::Approx(-0.09999999900000002).epsilon(1e-14));
  CHECK(elem(st.m, 0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(elem(st.v, 0) == doctest::Approx(0.05).epsilon(1e-14));
}

TEST_CASE("adamw: weight decay is decoupled") {
  // With g = 0 the only motion is theta *= (1 - lr*wd) per step.
  ParamVector theta = single(2.0);
  ParamVector g = single(0.0);
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  cfg.clip_norm = 0.0;
  AdamWState st = AdamWState::fresh(cfg, theta);
  adamw_step(theta, g, st, 0.1);
  CHECK(elem(theta, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-14));
}

TEST_CASE("adamw: global-norm clip") {
  // grads [6, 8] have norm 10; with clip 1 the update must match feeding the
  // pre-scaled gradient directly.
  ParamVector theta1 = pair2(0.0, 0.0);
  ParamVector theta2 = pair2(0.0, 0.0);
  AdamWConfig clip_on;
  clip_on.clip_norm = 1.0;
  AdamWConfig clip_off;
  clip_off.clip_norm = 0.0;
  AdamWState st1 = AdamWState::fresh(clip_on, theta1);
  AdamWState st2 = AdamWState::fresh(clip_off, theta2);
  ParamVector g = pair2(6.0, 8.0);
  ParamVector g_scaled = pair2(6.0 * (1.0 / 10.0), 8.0 * (1.0 / 10.0));
  adamw_step(theta1, g, st1, 0.1);
  adamw_step(theta2, g_scaled, st2, 0.1);
  CHECK(elem(theta1, 0) == doctest::Approx(elem(theta2, 0)).epsilon(1e-13));
  CHECK(elem(theta1, 1) == doctest::Approx(elem(theta2, 1)).epsilon(1e-13));

  // below the threshold the clip must not touch the gradient
  ParamVector theta3 = pair2(0.0, 0.0);
  ParamVector theta4 = pair2(0.0, 0.0);
  AdamWState st3 = AdamWState::fresh(clip_on, theta3);
  AdamWState st4 = AdamWState::fresh(clip_off, theta4);
  ParamVector small = pair2(0.3, 0.4);  // norm 0.5
  adamw_step(theta3, small, st3, 0.1);
  adamw_step(theta4, small, st4, 0.1);
  CHECK(bits_equal(theta3, theta4));

  // non-finite gradients fail loudly
  ParamVector theta5 = pair2(0.0, 0.0);
  AdamWState st5 = AdamWState::fresh(clip_on, theta5);
  ParamVector bad = pair2(std::numeric_limits<double>::infinity(), 0.0);
  CHECK_THROWS_AS(adamw_step(theta5, bad, st5, 0.1), NumericError);
}

TEST_CASE("sgd: plain and clipped") {
  // powers of two keep everything exact
  ParamVector theta = single(1.0);
  ParamVector g = single(2.0);
  sgd_step(theta, g, 0.25);
  CHECK(elem(theta, 0) == 0.5);

  theta = single(1.0);
  sgd_step(theta, g, 0.25, 0.5);  // norm 2 -> scale 0.25 -> g_eff 0.5
  CHECK(elem(theta, 0) == 0.875);
}

TEST_CASE("server momentum: nesterov trace") {
  // eta=0.1, mu=0.9, constant pseudo-gradient delta=1:
  //   v: 1, 1.9, 2.71   theta: -0.19, -0.461, -0.8049
  ServerOptConfig cfg;
  cfg.kind = ServerOptKind::FedMomentum;
  cfg.eta = 0.1;
  cfg.momentum = 0.9;
  cfg.nesterov = true;
  ParamVector theta = single(0.0);
  ServerOptState st = ServerOptState::init(cfg, theta);
  const double want_theta[] = {-0.19, -0.461, -0.8049000000000001};
  const double want_v[] = {1.0, 1.9, 2.71};
  for (int r = 0; r < 3; ++r) {
    ParamVector delta = single(1.0);
    ParamVector mean = theta.clone();
    (*mean.at("w").values)[0] -= 1.0;
    theta = server_step(st, theta, delta, mean);
    CHECK(elem(theta, 0) == doctest::Approx(want_theta[r]).epsilon(1e-12));
    CHECK(elem(st.velocity, 0) == doctest::Approx(want_v[r]).epsilon(1e-12));
  }
}

TEST_CASE("server momentum: heavy-ball trace") {
  ServerOptConfig cfg;
  cfg.kind = ServerOptKind::FedMomentum;
  cfg.eta = 0.1;
  cfg.momentum = 0.9;
  cfg.nesterov = false;
  ParamVector theta = single(0.0);
  ServerOptState st = ServerOptState::init(cfg, theta);
  const double want_theta[] = {-0.1, -0.29000000000000004, -0.561};
  for (int r = 0; r < 3; ++r) {
    ParamVector delta = single(1.0);
    ParamVector mean = theta.clone();
    (*mean.at("w").values)[0] -= 1.0;
    theta = server_step(st, theta, delta, mean);
    CHECK(elem(theta, 0) == doctest::Approx(want_theta[r]).epsilon(1e-12));
  }
}

TEST_CASE("plain averaging returns the client mean bit-for-bit") {
  // FedAvg and the degenerate momentum settings must not rewrite the mean
  // through theta - delta (a different rounding path).
  ParamVector theta = single(0.3);
  ParamVector mean = single(1.0 / 3.0);
  ParamVector delta = ParamVector::sub(theta, mean);

  ServerOptConfig avg;  // defaults: FedAvg, eta 1, mu 0
  ServerOptState st1 = ServerOptState::init(avg, theta);
  ParamVector out1 = server_step(st1, theta, delta, mean);
  CHECK(bits_equal(out1, mean));

  ServerOptConfig degen;
  degen.kind = ServerOptKind::FedMomentum;
  degen.eta = 1.0;
  degen.momentum = 0.0;
  ServerOptState st2 = ServerOptState::init(degen, theta);
  ParamVector out2 = server_step(st2, theta, delta, mean);
  CHECK(bits_equal(out2, mean));
}

TEST_CASE("server opt validation") {
  ServerOptConfig c;
  c.kind = ServerOptKind::FedAvg;
  c.eta = 0.5;  // fedavg is, by definition, the unscaled mean
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.eta = 1.0;
  c.momentum = 0.3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.momentum = 0.0;
  CHECK_NOTHROW(c.validate());
  ServerOptConfig m;
  m.kind = ServerOptKind::FedMomentum;
  m.eta = 0.1;
  m.momentum = 1.0;  // out of [0,1)
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("schedule period") {
  // ceil(20 * params / tokens_per_step)
  CHECK(compute_schedule_period(110400, 512) == 4313);
  CHECK(compute_schedule_period(1024, 1024) == 20);
  CHECK(compute_schedule_period(1, 64) == 1);
  CHECK_THROWS_AS(compute_schedule_period(0, 64), ConfigError);
  CHECK_THROWS_AS(compute_schedule_period(64, 0), ConfigError);
}
