#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/param_vector.h"
#include "fedsim/tensor.h"

namespace fedsim {

struct ModelConfig {
  std::size_t n_blocks = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t expansion_ratio = 4;
  std::size_t vocab_size = 64;
  std::size_t seq_len = 32;

  void validate() const;        // ConfigError on impossible combos
  std::size_t param_count() const;
  // Parameter payload size in MiB at 8 bytes per scalar, as fed to the
  // communication model.
  double payload_mib() const;
};

struct Batch {
  std::vector<std::int32_t> inputs;   // batch_size * seq_len, row-major
  std::vector<std::int32_t> targets;  // same layout, shifted by one
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;

  std::size_t tokens() const { return inputs.size(); }
};

struct ForwardResult {
  Tensor loss;                // scalar, mean over target tokens
  Tensor logits;              // [batch*seq, vocab]
  std::vector<Tensor> leaves; // parameter leaves in canonical order
};

// Decoder-only transformer: learned token + position embeddings, pre-norm
// blocks (LN -> causal MHA -> residual, LN -> GELU MLP -> residual), final
// LN, separate linear head.
class TransformerModel {
 public:
  explicit TransformerModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Fresh parameters: normal(0, 0.02) weights (residual output projections
  // scaled down by sqrt(2*n_blocks)), zero biases, unit LN gains.  Entry
  // order is the canonical order for everything downstream.
  ParamVector init_params(std::uint64_t seed) const;

  // Differentiable loss over one batch.  With build_grad=false the graph is
  // not recorded (cheap evaluation path).
  ForwardResult forward_loss(const ParamVector& params, const Batch& batch,
                             bool build_grad = true) const;

  // Collects leaf grads into a vector combinable with the params that
  // produced `fwd`.  Call after backward(fwd.loss).
  ParamVector collect_grads(const ForwardResult& fwd) const;

  // exp of token-weighted mean NLL across the given batches.
  double eval_perplexity(const ParamVector& params,
                         const std::vector<Batch>& batches) const;

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, Shape>> layout_;  // canonical entries
};

}  // namespace fedsim
