#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <memory>
#include <vector>

#include "doctest.h"
#include "fedsim/client.h"
#include "fedsim/data.h"
#include "fedsim/errors.h"
#include "fedsim/model.h"

using namespace fedsim;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.n_blocks = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.expansion_ratio = 4;
  cfg.vocab_size = 16;
  cfg.seq_len = 4;
  return cfg;
}

std::shared_ptr<const ShardPlan> tiny_plan(std::size_t shards) {
  Corpus c = generate_corpus("web", 2000, 5, 16);
  return std::make_shared<const ShardPlan>(partition_iid(std::move(c), shards, 4, 3));
}

LocalTrainConfig tiny_train_cfg() {
  LocalTrainConfig cfg;
  cfg.model = tiny_cfg();
  cfg.local_steps = 4;
  cfg.batch_size = 2;
  cfg.throughput_bps = 2.0;
  return cfg;
}

bool bits_equal(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entry(i);
    const auto& eb = b.entry(i);
    if (ea.name != eb.name || ea.numel() != eb.numel()) return false;
    if (std::memcmp(ea.values->data(), eb.values->data(),
                    ea.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("memory model fixtures") {
  ModelConfig cfg;  // 110400 params
  CHECK(estimate_model_memory_mb(cfg) == 3.369140625);  // 4 * 110400 * 8 / 2^20
  // per token: 10*2*64 + 4*64 + 2*2*32 + 2*64 = 1792; * 8 * 32 / 2^20
  CHECK(estimate_activation_mb(cfg) == 0.4375);
}

TEST_CASE("batch size: largest power of two under the budget") {
  ModelConfig cfg;
  ClientHardware hw;
  hw.vram_per_gpu_mb = 16.0;
  // 0.9*16 - 3.369 = 11.03 MB of activations -> 25 samples -> floor to 16
  CHECK(calc_batch_size(hw, cfg) == 16);
  hw.vram_per_gpu_mb = 81920.0;
  CHECK(calc_batch_size(hw, cfg) == 32);  // cap
  CHECK(calc_batch_size(hw, cfg, 8) == 8);
  hw.vram_per_gpu_mb = 4.0;  // nothing fits; floor at 1
  CHECK(calc_batch_size(hw, cfg) == 1);
  hw.vram_per_gpu_mb = 0.0;
  CHECK_THROWS_AS(calc_batch_size(hw, cfg), ConfigError);
}

TEST_CASE("strategy selection covers every branch") {
  ModelConfig cfg;  // model+act = 3.806640625 MB

  ClientHardware one;  // 80 GiB single GPU
  Strategy s = select_strategy(one, cfg);
  CHECK(s.kind == StrategyKind::kSingleGpu);
  CHECK(s.node_batch_sizes == std::vector<std::size_t>{32});

  ClientHardware ddp;
  ddp.gpus_per_node = 4;
  ddp.vram_per_gpu_mb = 16.0;
  s = select_strategy(ddp, cfg);
  CHECK(s.kind == StrategyKind::kDdp);
  CHECK(s.node_batch_sizes == std::vector<std::size_t>{16});

  ClientHardware fsdp;
  fsdp.gpus_per_node = 2;
  fsdp.vram_per_gpu_mb = 4.0;  // 3.6 usable < 3.81 needed per GPU, 8 total
  s = select_strategy(fsdp, cfg);
  CHECK(s.kind == StrategyKind::kFsdp);

  ClientHardware subfed;
  subfed.n_nodes = 2;
  subfed.vram_per_gpu_mb = 16.0;
  subfed.interconnect = Interconnect::kLowBandwidth;
  s = select_strategy(subfed, cfg);
  CHECK(s.kind == StrategyKind::kSubFederation);
  CHECK(s.node_batch_sizes == std::vector<std::size_t>{16, 16});

  // multi-node RDMA is data-parallel, not a nested federation
  ClientHardware rdma_nodes = subfed;
  rdma_nodes.interconnect = Interconnect::kRdma;
  CHECK(select_strategy(rdma_nodes, cfg).kind == StrategyKind::kDdp);

  ClientHardware too_small;
  too_small.vram_per_gpu_mb = 3.5;
  CHECK_THROWS_AS(select_strategy(too_small, cfg), CapacityError);

  ClientHardware single_tight;  // fits in aggregate only with >1 device
  single_tight.vram_per_gpu_mb = 4.0;
  CHECK_THROWS_AS(select_strategy(single_tight, cfg), CapacityError);

  CHECK(strategy_name(StrategyKind::kSubFederation) == std::string("sub_federation"));
}

TEST_CASE("post-processing policies") {
  ParamVector ref;
  ref.add("w", Shape{2}, {0.0, 0.0});
  ParamVector upd;
  upd.add("w", Shape{2}, {3.0, 4.0});  // update norm 5

  PostProcessPolicy identity;
  CHECK(bits_equal(post_process(ref, upd, identity), upd));

  PostProcessPolicy clip;
  clip.kind = PostProcessPolicy::Kind::kClipUpdateNorm;
  clip.threshold = 1.0;
  ParamVector clipped = post_process(ref, upd, clip);
  CHECK((*clipped.at("w").values)[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK((*clipped.at("w").values)[1] == doctest::Approx(0.8).epsilon(1e-14));

  clip.threshold = 10.0;  // under the ceiling: untouched
  CHECK(bits_equal(post_process(ref, upd, clip), upd));

  clip.threshold = 0.0;
  CHECK_THROWS_AS(post_process(ref, upd, clip), ConfigError);
}

TEST_CASE("local round: metrics, cursor, determinism") {
  auto plan = tiny_plan(1);
  LocalTrainConfig cfg = tiny_train_cfg();
  TransformerModel model(cfg.model);
  ParamVector theta0 = model.init_params(9);

  BatchStream s1(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  ClientResult r1 = run_local_round(theta0, s1, cfg, 0, 0, 0);
  CHECK(r1.steps.size() == 4);
  for (const auto& m : r1.steps) {
    CHECK(m.tokens == 8);  // batch 2 * seq 4
    CHECK(m.sim_seconds == 0.5);
    CHECK(std::isfinite(m.loss));
  }
  CHECK(r1.cursor == 8);  // 4 steps * 2 blocks
  CHECK(s1.cursor() == 8);
  CHECK(r1.tokens_consumed() == 32);
  CHECK(r1.mean_loss() ==
        doctest::Approx((r1.steps[0].loss + r1.steps[1].loss + r1.steps[2].loss +
                         r1.steps[3].loss) /
                        4.0)
            .epsilon(1e-15));
  CHECK(!bits_equal(r1.theta, theta0));  // it did move

  // bit-identical on replay
  BatchStream s2(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  ClientResult r2 = run_local_round(theta0, s2, cfg, 0, 0, 0);
  CHECK(bits_equal(r1.theta, r2.theta));

  // the schedule is indexed globally: a different step base, different result
  BatchStream s3(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  ClientResult r3 = run_local_round(theta0, s3, cfg, 1, 0, 1000);
  CHECK(!bits_equal(r1.theta, r3.theta));

  // plain SGD is a different optimizer, same plumbing
  BatchStream s4(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  LocalTrainConfig sgd_cfg = cfg;
  sgd_cfg.opt = ClientOptKind::kSgd;
  ClientResult r4 = run_local_round(theta0, s4, cfg, 0, 0, 0);
  ClientResult r5 = run_local_round(theta0, s4, sgd_cfg, 0, 0, 0);
  CHECK(!bits_equal(r4.theta, r5.theta));
}

TEST_CASE("local round: divergence carries its coordinates") {
  auto plan = tiny_plan(1);
  LocalTrainConfig cfg = tiny_train_cfg();
  TransformerModel model(cfg.model);
  ParamVector theta0 = model.init_params(9);
  for (std::size_t i = 0; i < theta0.size(); ++i)
    for (auto& v : *theta0.entry(i).values)
      v = std::numeric_limits<double>::quiet_NaN();

  BatchStream s(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  try {
    run_local_round(theta0, s, cfg, 3, 7, 0);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.round == 3);
    CHECK(e.client == 7);
    CHECK(e.step == 0);
  }
}

TEST_CASE("local round: update clip policy bounds the round update") {
  auto plan = tiny_plan(1);
  LocalTrainConfig cfg = tiny_train_cfg();
  cfg.schedule.eta_max = 0.05;  // move far enough to trip the clip
  cfg.schedule.warmup_steps = 1;
  cfg.post.kind = PostProcessPolicy::Kind::kClipUpdateNorm;
  cfg.post.threshold = 1e-3;
  TransformerModel model(cfg.model);
  ParamVector theta0 = model.init_params(9);
  BatchStream s(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  ClientResult r = run_local_round(theta0, s, cfg, 0, 0, 0);
  ParamVector update = ParamVector::sub(r.theta, theta0);
  CHECK(update.global_norm() == doctest::Approx(1e-3).epsilon(1e-10));
}

TEST_CASE("sub-federation: one node degenerates, two nodes average") {
  auto plan = tiny_plan(2);
  LocalTrainConfig cfg = tiny_train_cfg();
  TransformerModel model(cfg.model);
  ParamVector theta0 = model.init_params(9);

  // one node == run_local_round, bit for bit
  BatchStream a(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  BatchStream b(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  std::vector<BatchStream*> one = {&a};
  ClientResult sub1 = run_sub_federation(theta0, one, cfg, 0, 0, 0);
  ClientResult solo = run_local_round(theta0, b, cfg, 0, 0, 0);
  CHECK(bits_equal(sub1.theta, solo.theta));
  CHECK(sub1.mean_loss() == solo.mean_loss());

  // two nodes: uniform average of the independent node runs
  BatchStream n0(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  BatchStream n1(plan, 1, cfg.batch_size, 4, stream_seed(1, 1));
  std::vector<BatchStream*> both = {&n0, &n1};
  ClientResult sub2 = run_sub_federation(theta0, both, cfg, 0, 0, 0);

  BatchStream m0(plan, 0, cfg.batch_size, 4, stream_seed(1, 0));
  BatchStream m1(plan, 1, cfg.batch_size, 4, stream_seed(1, 1));
  ClientResult r0 = run_local_round(theta0, m0, cfg, 0, 0, 0);
  ClientResult r1 = run_local_round(theta0, m1, cfg, 0, 0, 0);
  ParamVector want = ParamVector::mean({&r0.theta, &r1.theta});
  CHECK(bits_equal(sub2.theta, want));
  CHECK(sub2.steps.size() == 4);
  CHECK(sub2.steps[0].loss ==
        doctest::Approx((r0.steps[0].loss + r1.steps[0].loss) / 2.0)
            .epsilon(1e-14));

  std::vector<BatchStream*> none;
  CHECK_THROWS_AS(run_sub_federation(theta0, none, cfg, 0, 0, 0), UsageError);
}

TEST_CASE("client checkpoints round-trip") {
  namespace fs = std::filesystem;
  const auto p = fs::temp_directory_path() / "fedsim_client_ck.phck";
  ModelConfig mc = tiny_cfg();
  TransformerModel model(mc);
  ParamVector theta = model.init_params(31);
  write_client_checkpoint(p, theta, 5, 77);
  ClientCheckpoint back = read_client_checkpoint(p);
  CHECK(back.round == 5);
  CHECK(back.cursor == 77);
  CHECK(bits_equal(back.theta, theta));
  fs::remove(p);
}
