#include "fedsim/client.h"

#include <cmath>
#include <string>

#include "fedsim/checkpoint.h"
#include "fedsim/errors.h"

namespace fedsim {

void ClientHardware::validate() const {
  if (n_nodes < 1 || gpus_per_node < 1) {
    throw ConfigError("hardware: node and GPU counts must be >= 1");
  }
  if (!(vram_per_gpu_mb > 0.0)) throw ConfigError("hardware: vram must be > 0");
}

const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::kSingleGpu: return "single_gpu";
    case StrategyKind::kDdp: return "ddp";
    case StrategyKind::kFsdp: return "fsdp";
    case StrategyKind::kSubFederation: return "sub_federation";
  }
  return "?";
}

double estimate_model_memory_mb(const ModelConfig& cfg) {
  // params + grads + two Adam moments, all f64
  return 4.0 * static_cast<double>(cfg.param_count()) * 8.0 / 1048576.0;
}

double estimate_activation_mb(const ModelConfig& cfg) {
  // Stored per sample: ~10 d-wide block intermediates plus attention maps,
  // embeddings and logits.  Coarse but fixed, so the selector is stable.
  const double d = static_cast<double>(cfg.d_model);
  const double s = static_cast<double>(cfg.seq_len);
  const double blocks = static_cast<double>(cfg.n_blocks);
  const double per_token = 10.0 * blocks * d + 4.0 * d +
                           blocks * static_cast<double>(cfg.n_heads) * s +
                           2.0 * static_cast<double>(cfg.vocab_size);
  return 8.0 * s * per_token / 1048576.0;
}

std::size_t calc_batch_size(const ClientHardware& hw, const ModelConfig& cfg,
                            std::size_t max_local_batch) {
  hw.validate();
  cfg.validate();
  if (max_local_batch < 1) throw ConfigError("max_local_batch must be >= 1");
  const double budget = 0.9 * hw.vram_per_gpu_mb;
  const double fixed = estimate_model_memory_mb(cfg);
  const double per_sample = estimate_activation_mb(cfg);
  std::size_t best = 1;
  for (std::size_t b = 1; b <= max_local_batch; b *= 2) {
    if (fixed + static_cast<double>(b) * per_sample <= budget) best = b;
    if (b > max_local_batch / 2) break;  // avoid overflow on the doubling
  }
  return best;
}

Strategy select_strategy(const ClientHardware& hw, const ModelConfig& cfg,
                         std::size_t max_local_batch) {
  hw.validate();
  cfg.validate();
  const double model_mb = estimate_model_memory_mb(cfg);
  const double total_vram =
      hw.vram_per_gpu_mb * static_cast<double>(hw.n_nodes * hw.gpus_per_node);
  if (model_mb + estimate_activation_mb(cfg) > total_vram) {
    throw CapacityError("model does not fit total VRAM (" +
                        std::to_string(model_mb) + " MB model vs " +
                        std::to_string(total_vram) + " MB)");
  }
  const bool fits_one_gpu =
      model_mb + estimate_activation_mb(cfg) <= 0.9 * hw.vram_per_gpu_mb;

  Strategy s;
  if (hw.n_nodes > 1 && hw.interconnect == Interconnect::kLowBandwidth) {
    s.kind = StrategyKind::kSubFederation;
    s.node_batch_sizes.assign(hw.n_nodes, calc_batch_size(hw, cfg, max_local_batch));
    return s;
  }
  if (hw.gpus_per_node > 1 || hw.n_nodes > 1) {
    s.kind = fits_one_gpu ? StrategyKind::kDdp : StrategyKind::kFsdp;
    s.node_batch_sizes.assign(hw.n_nodes, calc_batch_size(hw, cfg, max_local_batch));
    return s;
  }
  if (!fits_one_gpu) {
    throw CapacityError("model fits total VRAM only across devices, but the "
                        "hardware has a single GPU");
  }
  s.kind = StrategyKind::kSingleGpu;
  s.node_batch_sizes.assign(1, calc_batch_size(hw, cfg, max_local_batch));
  return s;
}

ParamVector post_process(const ParamVector& theta_ref, const ParamVector& theta_k,
                         const PostProcessPolicy& policy) {
  if (policy.kind == PostProcessPolicy::Kind::kIdentity) {
    return theta_k.clone();
  }
  if (!(policy.threshold > 0.0)) {
    throw ConfigError("clip post-process needs a positive threshold");
  }
  ParamVector update = ParamVector::sub(theta_k, theta_ref);
  const double norm = update.global_norm();
  if (norm <= policy.threshold) return theta_k.clone();
  ParamVector out = theta_ref.clone();
  out.add_scaled(update, policy.threshold / norm);
  return out;
}

double ClientResult::mean_loss() const {
  if (steps.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : steps) acc += s.loss;
  return acc / static_cast<double>(steps.size());
}

std::size_t ClientResult::tokens_consumed() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.tokens;
  return n;
}

ClientResult run_local_round(const ParamVector& theta_t, BatchStream& stream,
                             const LocalTrainConfig& cfg, std::size_t round,
                             std::size_t client_id, std::size_t step_base) {
  const TransformerModel model(cfg.model);
  ClientResult res;
  res.theta = theta_t.clone();
  res.steps.reserve(cfg.local_steps);

  AdamWState opt = AdamWState::fresh(cfg.adamw, res.theta);  // stateless rule
  const double step_seconds = 1.0 / cfg.throughput_bps;
  for (std::size_t i = 0; i < cfg.local_steps; ++i) {
    Batch batch = stream.next();
    ForwardResult fwd = model.forward_loss(res.theta, batch);
    const double loss = fwd.loss.item();
    if (!std::isfinite(loss)) {
      throw DivergenceError("client " + std::to_string(client_id) +
                                " diverged at round " + std::to_string(round) +
                                ", step " + std::to_string(i),
                            round, client_id, i);
    }
    backward(fwd.loss);
    ParamVector grads = model.collect_grads(fwd);
    const double lr = lr_at(cfg.schedule, step_base + i);
    if (cfg.opt == ClientOptKind::kAdamW) {
      adamw_step(res.theta, grads, opt, lr);
    } else {
      sgd_step(res.theta, grads, lr, cfg.sgd_clip_norm);
    }
    res.steps.push_back(StepMetric{loss, batch.tokens(), step_seconds});
  }
  res.theta = post_process(theta_t, res.theta, cfg.post);
  res.cursor = stream.cursor();
  return res;
}

ClientResult run_sub_federation(const ParamVector& theta_t,
                                std::vector<BatchStream*>& node_streams,
                                const LocalTrainConfig& cfg, std::size_t round,
                                std::size_t client_id, std::size_t step_base) {
  if (node_streams.empty()) throw UsageError("sub-federation needs >= 1 node");
  for (auto* s : node_streams) {
    if (!s) throw UsageError("sub-federation: null node stream");
  }
  if (node_streams.size() == 1) {
    return run_local_round(theta_t, *node_streams[0], cfg, round, client_id,
                           step_base);
  }
  // Post-processing applies to the aggregated client update, not per node.
  LocalTrainConfig node_cfg = cfg;
  node_cfg.post = PostProcessPolicy{};
  std::vector<ClientResult> node_results;
  node_results.reserve(node_streams.size());
  for (auto* s : node_streams) {
    node_results.push_back(
        run_local_round(theta_t, *s, node_cfg, round, client_id, step_base));
  }
  ClientResult res;
  std::vector<const ParamVector*> thetas;
  for (const auto& nr : node_results) thetas.push_back(&nr.theta);
  res.theta = post_process(theta_t, ParamVector::mean(thetas), cfg.post);
  res.steps.assign(cfg.local_steps, StepMetric{});
  for (std::size_t i = 0; i < cfg.local_steps; ++i) {
    double loss = 0.0;
    std::size_t tokens = 0;
    for (const auto& nr : node_results) {
      loss += nr.steps[i].loss;
      tokens += nr.steps[i].tokens;
    }
    // nodes run in parallel, so a step costs one step's wall time
    res.steps[i] = StepMetric{loss / static_cast<double>(node_results.size()),
                              tokens, 1.0 / cfg.throughput_bps};
  }
  res.cursor = node_results[0].cursor;
  return res;
}

void write_client_checkpoint(const std::filesystem::path& path,
                             const ParamVector& theta, std::uint64_t round,
                             std::uint64_t cursor) {
  ParamVector with_state = theta.clone();
  with_state.add("state.cursor", Shape{1},
                 {static_cast<double>(cursor)});
  CheckpointMeta meta;
  meta.round = round;
  write_checkpoint(path, with_state, meta);
}

ClientCheckpoint read_client_checkpoint(const std::filesystem::path& path) {
  Checkpoint raw = read_checkpoint(path);
  ClientCheckpoint out;
  out.round = raw.meta.round;
  if (raw.params.size() == 0 ||
      raw.params.entry(raw.params.size() - 1).name != "state.cursor") {
    throw IntegrityError("client checkpoint missing cursor entry");
  }
  out.cursor = static_cast<std::uint64_t>(
      (*raw.params.entry(raw.params.size() - 1).values)[0]);
  for (std::size_t i = 0; i + 1 < raw.params.size(); ++i) {
    const auto& e = raw.params.entry(i);
    out.theta.add(e.name, e.shape, *e.values);
  }
  return out;
}

}  // namespace fedsim
