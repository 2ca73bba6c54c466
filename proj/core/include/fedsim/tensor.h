#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "fedsim/errors.h"

namespace fedsim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  std::vector<double> grad;            // allocated during backward
  bool requires_grad = false;
  bool consumed = false;               // set once backward has run through
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grads.  Fixed accumulation
  // order (ascending indices) keeps backward bit-reproducible.
  std::function<void(TensorNode&)> backprop;

  std::size_t numel() const { return values->size(); }
};

}  // namespace detail

// Dense f64 tensor; value semantics over a shared node so ops can record the
// graph edges needed for reverse-mode differentiation.  Graphs are one-shot:
// a second backward over the same nodes is a UsageError.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  // Shares the buffer: writes through `storage` are visible to the tensor.
  // Used to hang parameter vectors into a graph without copying.
  static Tensor from_storage(Shape shape,
                             std::shared_ptr<std::vector<double>> storage,
                             bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t i) const;

  const std::vector<double>& data() const;
  std::vector<double>& data();
  // Null until backward has produced one.
  const std::vector<double>* grad() const;
  bool requires_grad() const;
  double item() const;  // scalar tensors only

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  static Tensor make(Shape shape, std::vector<double> values);

  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor op_result(Shape shape, std::vector<double> values,
                          std::vector<std::shared_ptr<detail::TensorNode>> parents,
                          std::function<void(detail::TensorNode&)> backprop);
};

// --- ops -------------------------------------------------------------------
// All ops are defined for the layouts the model needs; every backward uses a
// fixed summation order, so repeated runs are bit-identical.

// c[m,n] = a[m,k] @ b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// elementwise; shapes must match exactly
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// x[m,n] + bias[n] broadcast over rows
Tensor add_bias(const Tensor& x, const Tensor& bias);
// out[i,:] = table[index[i],:]; duplicate indices accumulate in backward
Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& index);
// per-row normalization over the last dim with learned gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// exact (erf) form
Tensor gelu(const Tensor& x);
// scalar sum of all elements, fixed left-to-right
Tensor sum(const Tensor& x);

// Fused causal multi-head self-attention over packed [batch*seq, d] inputs.
// Softmax is masked by summing only over positions j <= i (no -inf arithmetic).
// Returns the packed [batch*seq, d] context; the caller applies the output
// projection.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t n_heads);

// Mean token cross-entropy of logits [n, vocab] against targets[n], with
// max-subtraction inside the log-softmax.  target < 0 marks a padding slot and
// is excluded from the mean (not used by the trainer, but cheap to support).
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::int32_t>& targets);

// Reverse-mode pass from a scalar root.  Accumulates grads on every reachable
// node with requires_grad; marks the traversed graph consumed.
void backward(const Tensor& loss);

}  // namespace fedsim
