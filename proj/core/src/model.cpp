#include "fedsim/model.h"

#include <cmath>

#include "fedsim/errors.h"
#include "fedsim/rng.h"

namespace fedsim {

void ModelConfig::validate() const {
  if (n_blocks == 0) throw ConfigError("model: n_blocks must be >= 1");
  if (d_model == 0) throw ConfigError("model: d_model must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model: d_model must be divisible by n_heads");
  }
  if (expansion_ratio == 0) throw ConfigError("model: expansion_ratio must be >= 1");
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (seq_len == 0) throw ConfigError("model: seq_len must be >= 1");
}

std::size_t ModelConfig::param_count() const {
  const std::size_t d = d_model, e = expansion_ratio;
  const std::size_t per_block = (4 + 2 * e) * d * d + (9 + e) * d;
  return vocab_size * d + seq_len * d + n_blocks * per_block + 2 * d +
         d * vocab_size + vocab_size;
}

double ModelConfig::payload_mib() const {
  return static_cast<double>(param_count()) * 8.0 / (1024.0 * 1024.0);
}

TransformerModel::TransformerModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  const std::size_t hidden = cfg_.expansion_ratio * d;
  layout_.emplace_back("token_embedding", Shape{cfg_.vocab_size, d});
  layout_.emplace_back("position_embedding", Shape{cfg_.seq_len, d});
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    layout_.emplace_back(p + "ln1.gain", Shape{d});
    layout_.emplace_back(p + "ln1.bias", Shape{d});
    layout_.emplace_back(p + "attn.wq", Shape{d, d});
    layout_.emplace_back(p + "attn.bq", Shape{d});
    layout_.emplace_back(p + "attn.wk", Shape{d, d});
    layout_.emplace_back(p + "attn.bk", Shape{d});
    layout_.emplace_back(p + "attn.wv", Shape{d, d});
    layout_.emplace_back(p + "attn.bv", Shape{d});
    layout_.emplace_back(p + "attn.wo", Shape{d, d});
    layout_.emplace_back(p + "attn.bo", Shape{d});
    layout_.emplace_back(p + "ln2.gain", Shape{d});
    layout_.emplace_back(p + "ln2.bias", Shape{d});
    layout_.emplace_back(p + "mlp.w1", Shape{d, hidden});
    layout_.emplace_back(p + "mlp.b1", Shape{hidden});
    layout_.emplace_back(p + "mlp.w2", Shape{hidden, d});
    layout_.emplace_back(p + "mlp.b2", Shape{d});
  }
  layout_.emplace_back("final_ln.gain", Shape{d});
  layout_.emplace_back("final_ln.bias", Shape{d});
  layout_.emplace_back("head.w", Shape{d, cfg_.vocab_size});
  layout_.emplace_back("head.b", Shape{cfg_.vocab_size});
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ParamVector TransformerModel::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  const double base_std = 0.02;
  const double resid_std =
      base_std / std::sqrt(2.0 * static_cast<double>(cfg_.n_blocks));
  ParamVector out;
  for (const auto& [name, shape] : layout_) {
    std::vector<double> vals(shape_numel(shape));
    if (ends_with(name, ".gain")) {
      for (auto& x : vals) x = 1.0;
    } else if (ends_with(name, ".bias") || ends_with(name, ".bq") ||
               ends_with(name, ".bk") || ends_with(name, ".bv") ||
               ends_with(name, ".bo") || ends_with(name, ".b1") ||
               ends_with(name, ".b2") || ends_with(name, ".b")) {
      // zeros; no RNG draws for deterministic fills
    } else {
      const double std_dev =
          (ends_with(name, "attn.wo") || ends_with(name, "mlp.w2")) ? resid_std
                                                                    : base_std;
      for (auto& x : vals) x = rng.normal() * std_dev;
    }
    out.add(name, shape, std::move(vals));
  }
  return out;
}

ForwardResult TransformerModel::forward_loss(const ParamVector& params,
                                             const Batch& batch,
                                             bool build_grad) const {
  if (params.size() != layout_.size()) {
    throw ShapeError("forward: params do not match model layout");
  }
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (params.entry(i).name != layout_[i].first ||
        params.entry(i).shape != layout_[i].second) {
      throw ShapeError("forward: params entry " + std::to_string(i) +
                       " does not match model layout (" + params.entry(i).name +
                       ")");
    }
  }
  if (batch.batch_size == 0 || batch.seq_len == 0 ||
      batch.inputs.size() != batch.batch_size * batch.seq_len ||
      batch.targets.size() != batch.inputs.size()) {
    throw ShapeError("forward: inconsistent batch");
  }
  if (batch.seq_len > cfg_.seq_len) {
    throw ShapeError("forward: batch seq_len exceeds model seq_len");
  }

  ForwardResult res;
  res.leaves.reserve(layout_.size());
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const ParamEntry& e = params.entry(i);
    res.leaves.push_back(Tensor::from_storage(e.shape, e.values, build_grad));
  }
  auto leaf = [&](const std::string& name) -> const Tensor& {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (layout_[i].first == name) return res.leaves[i];
    }
    throw LookupError("no model entry " + name);
  };

  const std::size_t bs = batch.batch_size, sl = batch.seq_len;
  std::vector<std::int32_t> pos_ids(bs * sl);
  for (std::size_t r = 0; r < bs * sl; ++r) {
    pos_ids[r] = static_cast<std::int32_t>(r % sl);
  }

  Tensor x = add(gather_rows(leaf("token_embedding"), batch.inputs),
                 gather_rows(leaf("position_embedding"), pos_ids));
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Tensor h = layer_norm(x, leaf(p + "ln1.gain"), leaf(p + "ln1.bias"));
    Tensor q = add_bias(matmul(h, leaf(p + "attn.wq")), leaf(p + "attn.bq"));
    Tensor k = add_bias(matmul(h, leaf(p + "attn.wk")), leaf(p + "attn.bk"));
    Tensor v = add_bias(matmul(h, leaf(p + "attn.wv")), leaf(p + "attn.bv"));
    Tensor att = causal_attention(q, k, v, bs, sl, cfg_.n_heads);
    x = add(x, add_bias(matmul(att, leaf(p + "attn.wo")), leaf(p + "attn.bo")));
    Tensor h2 = layer_norm(x, leaf(p + "ln2.gain"), leaf(p + "ln2.bias"));
    Tensor u = gelu(add_bias(matmul(h2, leaf(p + "mlp.w1")), leaf(p + "mlp.b1")));
    x = add(x, add_bias(matmul(u, leaf(p + "mlp.w2")), leaf(p + "mlp.b2")));
  }
  Tensor xf = layer_norm(x, leaf("final_ln.gain"), leaf("final_ln.bias"));
  res.logits = add_bias(matmul(xf, leaf("head.w")), leaf("head.b"));
  res.loss = softmax_cross_entropy(res.logits, batch.targets);
  return res;
}

ParamVector TransformerModel::collect_grads(const ForwardResult& fwd) const {
  if (fwd.leaves.size() != layout_.size()) {
    throw UsageError("collect_grads: forward result does not match model");
  }
  ParamVector out;
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const auto* g = fwd.leaves[i].grad();
    if (!g) {
      throw UsageError("collect_grads called before backward (no grad on " +
                       layout_[i].first + ")");
    }
    out.add(layout_[i].first, layout_[i].second, *g);
  }
  return out;
}

double TransformerModel::eval_perplexity(const ParamVector& params,
                                         const std::vector<Batch>& batches) const {
  if (batches.empty()) throw UsageError("eval_perplexity: no batches");
  double total_nll = 0.0;
  std::size_t total_tokens = 0;
  for (const Batch& b : batches) {
    std::size_t valid = 0;
    for (auto t : b.targets) {
      if (t >= 0) ++valid;
    }
    ForwardResult r = forward_loss(params, b, /*build_grad=*/false);
    total_nll += r.loss.item() * static_cast<double>(valid);
    total_tokens += valid;
  }
  if (total_tokens == 0) throw UsageError("eval_perplexity: no target tokens");
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

}  // namespace fedsim
