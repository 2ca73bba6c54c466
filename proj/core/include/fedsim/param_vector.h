#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedsim/tensor.h"

namespace fedsim {

struct ParamEntry {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> values;

  std::size_t numel() const { return values->size(); }
};

// Ordered, named collection of f64 buffers.  Entry order is fixed at
// construction and defines the canonical flat order used by every reduction
// (norms, means, optimizer updates), which is what makes aggregation
// bit-reproducible.
class ParamVector {
 public:
  ParamVector() = default;

  void add(std::string name, Shape shape, std::vector<double> values);
  void add_zeros(const std::string& name, const Shape& shape);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_len() const;
  const ParamEntry& entry(std::size_t i) const;
  ParamEntry& entry(std::size_t i);
  const ParamEntry& at(const std::string& name) const;  // LookupError if absent
  bool has(const std::string& name) const;

  ParamVector clone() const;
  ParamVector zeros_like() const;
  bool same_structure(const ParamVector& other) const;  // names, order, shapes
  void check_combinable(const ParamVector& other) const;

  // Element-wise in canonical order.
  void add_scaled(const ParamVector& other, double alpha);  // this += alpha*other
  void scale(double c);
  void divide(double c);
  double global_norm() const;  // sqrt of left-to-right sum of squares
  bool all_finite() const;

  // a - b (new vector)
  static ParamVector sub(const ParamVector& a, const ParamVector& b);
  // Canonical mean: sum in the given (ascending) order, then divide by count.
  // Division, not multiplication by a reciprocal, so mean of one is exact.
  static ParamVector mean(const std::vector<const ParamVector*>& vs);

  // Flat copy helpers (canonical order).
  std::vector<double> flatten() const;
  void assign_flat(const std::vector<double>& flat);

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace fedsim
