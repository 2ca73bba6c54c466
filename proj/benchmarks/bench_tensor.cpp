// Op-level timings at the shapes the default model actually runs.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "fedsim/model.h"
#include "fedsim/rng.h"
#include "fedsim/tensor.h"

using namespace fedsim;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * 0.02;
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Batch random_batch(const ModelConfig& cfg, std::size_t batch_size,
                   std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = cfg.seq_len;
  b.inputs.resize(batch_size * cfg.seq_len);
  b.targets.resize(batch_size * cfg.seq_len);
  for (auto& t : b.inputs)
    t = static_cast<std::int32_t>(rng.uniform_u64(cfg.vocab_size));
  for (auto& t : b.targets)
    t = static_cast<std::int32_t>(rng.uniform_u64(cfg.vocab_size));
  return b;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({4 * n, n}, 1, false);
  const Tensor b = random_tensor({n, n}, 2, false);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_CausalAttention(benchmark::State& state) {
  const std::size_t batch = 8, seq = 32, d = 64, heads = 4;
  const Tensor q = random_tensor({batch * seq, d}, 3, false);
  const Tensor k = random_tensor({batch * seq, d}, 4, false);
  const Tensor v = random_tensor({batch * seq, d}, 5, false);
  for (auto _ : state) {
    Tensor ctx = causal_attention(q, k, v, batch, seq, heads);
    benchmark::DoNotOptimize(ctx.data());
  }
}
BENCHMARK(BM_CausalAttention);

static void BM_LayerNorm(benchmark::State& state) {
  const Tensor x = random_tensor({256, 64}, 6, false);
  const Tensor gain = Tensor::full({64}, 1.0);
  const Tensor bias = Tensor::zeros({64});
  for (auto _ : state) {
    Tensor y = layer_norm(x, gain, bias);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LayerNorm);

static void BM_SoftmaxCrossEntropy(benchmark::State& state) {
  const std::size_t rows = 256, vocab = 256;
  const Tensor logits = random_tensor({rows, vocab}, 7, false);
  std::vector<std::int32_t> targets(rows);
  Rng rng(8);
  for (auto& t : targets)
    t = static_cast<std::int32_t>(rng.uniform_u64(vocab));
  for (auto _ : state) {
    Tensor loss = softmax_cross_entropy(logits, targets);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_SoftmaxCrossEntropy);

static void BM_ForwardLoss(benchmark::State& state) {
  ModelConfig cfg;
  TransformerModel model(cfg);
  ParamVector theta = model.init_params(1);
  const Batch batch = random_batch(cfg, 8, 9);
  for (auto _ : state) {
    auto fwd = model.forward_loss(theta, batch, false);
    benchmark::DoNotOptimize(fwd.loss.item());
  }
}
BENCHMARK(BM_ForwardLoss);

static void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  TransformerModel model(cfg);
  ParamVector theta = model.init_params(1);
  const Batch batch = random_batch(cfg, 8, 10);
  for (auto _ : state) {
    auto fwd = model.forward_loss(theta, batch, true);
    backward(fwd.loss);
    ParamVector grads = model.collect_grads(fwd);
    benchmark::DoNotOptimize(grads.total_len());
  }
}
BENCHMARK(BM_ForwardBackward);

BENCHMARK_MAIN();
