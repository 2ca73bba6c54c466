// Training-loop timings: optimizer steps, the data pipeline, a full local
// step, and the server-side aggregation math on default-sized parameters.

#include <benchmark/benchmark.h>

#include <memory>

#include "fedsim/baselines.h"
#include "fedsim/data.h"
#include "fedsim/model.h"
#include "fedsim/optim.h"
#include "fedsim/param_vector.h"
#include "fedsim/rng.h"

using namespace fedsim;

namespace {

struct TrainFixture {
  ModelConfig cfg;
  TransformerModel model{cfg};
  ParamVector theta = model.init_params(1);
  std::shared_ptr<const ShardPlan> plan = std::make_shared<const ShardPlan>(
      partition_iid(generate_corpus("web", 20000, 13), 1, cfg.seq_len, 17));
  BatchStream stream{plan, 0, 8, cfg.seq_len, stream_seed(9, 0)};

  ParamVector grads_once() {
    const Batch b = stream.next();
    auto fwd = model.forward_loss(theta, b, true);
    backward(fwd.loss);
    return model.collect_grads(fwd);
  }
};

}  // namespace

static void BM_GenerateCorpus(benchmark::State& state) {
  for (auto _ : state) {
    Corpus c = generate_corpus("web", 100000, 13);
    benchmark::DoNotOptimize(c.tokens.size());
  }
}
BENCHMARK(BM_GenerateCorpus);

static void BM_BatchStreamNext(benchmark::State& state) {
  TrainFixture f;
  for (auto _ : state) {
    Batch b = f.stream.next();
    benchmark::DoNotOptimize(b.tokens());
  }
}
BENCHMARK(BM_BatchStreamNext);

static void BM_AdamwStep(benchmark::State& state) {
  TrainFixture f;
  const ParamVector grads = f.grads_once();
  AdamWState opt = AdamWState::fresh(AdamWConfig{}, f.theta);
  for (auto _ : state) {
    adamw_step(f.theta, grads, opt, 1e-4);
    benchmark::DoNotOptimize(f.theta.total_len());
  }
}
BENCHMARK(BM_AdamwStep);

static void BM_SgdStep(benchmark::State& state) {
  TrainFixture f;
  const ParamVector grads = f.grads_once();
  for (auto _ : state) {
    sgd_step(f.theta, grads, 1e-4, 1.0);
    benchmark::DoNotOptimize(f.theta.total_len());
  }
}
BENCHMARK(BM_SgdStep);

static void BM_LocalStep(benchmark::State& state) {
  TrainFixture f;
  AdamWState opt = AdamWState::fresh(AdamWConfig{}, f.theta);
  for (auto _ : state) {
    const Batch b = f.stream.next();
    auto fwd = f.model.forward_loss(f.theta, b, true);
    backward(fwd.loss);
    ParamVector grads = f.model.collect_grads(fwd);
    adamw_step(f.theta, grads, opt, 1e-4);
    benchmark::DoNotOptimize(f.theta.total_len());
  }
}
BENCHMARK(BM_LocalStep);

static void BM_ServerStep(benchmark::State& state) {
  TrainFixture f;
  const ParamVector mean = f.theta.clone();
  ParamVector delta = f.theta.clone();
  for (std::size_t e = 0; e < delta.size(); ++e)
    for (auto& x : *delta.entry(e).values) x *= 1e-3;
  ServerOptState srv = ServerOptState::init(diloco_server_opt(), f.theta);
  for (auto _ : state) {
    ParamVector next = server_step(srv, f.theta, delta, mean);
    benchmark::DoNotOptimize(next.total_len());
  }
}
BENCHMARK(BM_ServerStep);

BENCHMARK_MAIN();
