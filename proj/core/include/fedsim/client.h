#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedsim/data.h"
#include "fedsim/model.h"
#include "fedsim/optim.h"
#include "fedsim/param_vector.h"

namespace fedsim {

enum class Interconnect { kRdma, kLowBandwidth };

struct ClientHardware {
  std::size_t n_nodes = 1;
  std::size_t gpus_per_node = 1;
  double vram_per_gpu_mb = 81920.0;
  Interconnect interconnect = Interconnect::kRdma;

  void validate() const;
};

enum class StrategyKind { kSingleGpu, kDdp, kFsdp, kSubFederation };

const char* strategy_name(StrategyKind k);

struct Strategy {
  StrategyKind kind = StrategyKind::kSingleGpu;
  std::vector<std::size_t> node_batch_sizes;  // one per participating node
};

// Deterministic f64 memory footprint used by the selection heuristic:
// params, grads and both Adam moments resident (4 copies of the payload).
double estimate_model_memory_mb(const ModelConfig& cfg);
// Stored activations per sample, from a fixed per-layer accounting.
double estimate_activation_mb(const ModelConfig& cfg);

// Heuristic of the training-strategy selector: single GPU when the model and
// batch fit one device; DDP/FSDP on multi-GPU RDMA nodes (DDP if the model
// fits a single device, FSFP otherwise); sub-federation across low-bandwidth
// multi-node setups.  CapacityError when the model exceeds total VRAM.
Strategy select_strategy(const ClientHardware& hw, const ModelConfig& cfg,
                         std::size_t max_local_batch = 32);

// Largest power-of-two batch with footprint <= 0.9 * per-GPU VRAM, floored at
// 1 and capped at max_local_batch.
std::size_t calc_batch_size(const ClientHardware& hw, const ModelConfig& cfg,
                            std::size_t max_local_batch = 32);

struct PostProcessPolicy {
  enum class Kind { kIdentity, kClipUpdateNorm };
  Kind kind = Kind::kIdentity;
  double threshold = 0.0;  // update-norm ceiling for kClipUpdateNorm
};

// Identity by default; the clip policy rescales the round update
// (theta_k - theta_ref) to `threshold` when its global norm exceeds it.
ParamVector post_process(const ParamVector& theta_ref, const ParamVector& theta_k,
                         const PostProcessPolicy& policy);

enum class ClientOptKind { kAdamW, kSgd };

// Hyperparameter bundle handed to every client in a round.
struct LocalTrainConfig {
  ModelConfig model;
  AdamWConfig adamw;
  LrSchedule schedule;
  ClientOptKind opt = ClientOptKind::kAdamW;
  double sgd_clip_norm = 0.0;  // plain SGD override: no clip unless set
  std::size_t local_steps = 64;
  std::size_t batch_size = 8;
  double throughput_bps = 2.0;  // simulated step timing (1/nu per step)
  PostProcessPolicy post;
};

struct StepMetric {
  double loss = 0.0;
  std::size_t tokens = 0;
  double sim_seconds = 0.0;
};

struct ClientResult {
  ParamVector theta;
  std::vector<StepMetric> steps;
  std::uint64_t cursor = 0;

  double mean_loss() const;
  std::size_t tokens_consumed() const;
};

// One client round: tau optimizer steps from theta_t with a fresh optimizer
// state (stateless clients), LR indexed by step_base + local step.  The
// stream advances in place.  Non-finite loss raises DivergenceError with
// (round, client, step).
ClientResult run_local_round(const ParamVector& theta_t, BatchStream& stream,
                             const LocalTrainConfig& cfg, std::size_t round,
                             std::size_t client_id, std::size_t step_base);

// Sub-federation: every node trains independently from theta_t on its own
// stream; the client update is the uniform node average; per-step metrics are
// averaged across nodes.  One node degenerates to run_local_round.
ClientResult run_sub_federation(const ParamVector& theta_t,
                                std::vector<BatchStream*>& node_streams,
                                const LocalTrainConfig& cfg, std::size_t round,
                                std::size_t client_id, std::size_t step_base);

// Optional per-(round, client) local snapshot: the model payload plus the
// stream cursor tucked in as a "state.cursor" entry.
void write_client_checkpoint(const std::filesystem::path& path,
                             const ParamVector& theta, std::uint64_t round,
                             std::uint64_t cursor);
struct ClientCheckpoint {
  ParamVector theta;
  std::uint64_t round = 0;
  std::uint64_t cursor = 0;
};
ClientCheckpoint read_client_checkpoint(const std::filesystem::path& path);

}  // namespace fedsim
