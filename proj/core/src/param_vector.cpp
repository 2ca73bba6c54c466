#include "fedsim/param_vector.h"

#include <cmath>

#include "fedsim/errors.h"

namespace fedsim {

void ParamVector::add(std::string name, Shape shape, std::vector<double> values) {
  if (name.empty()) throw UsageError("param entry needs a name");
  if (has(name)) throw UsageError("duplicate param entry: " + name);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("param entry " + name + ": data length " +
                     std::to_string(values.size()) + " does not match shape");
  }
  ParamEntry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.values = std::make_shared<std::vector<double>>(std::move(values));
  entries_.push_back(std::move(e));
}

void ParamVector::add_zeros(const std::string& name, const Shape& shape) {
  add(name, shape, std::vector<double>(shape_numel(shape), 0.0));
}

std::size_t ParamVector::total_len() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.numel();
  return n;
}

const ParamEntry& ParamVector::entry(std::size_t i) const {
  if (i >= entries_.size()) throw IndexError("param entry index out of range");
  return entries_[i];
}

ParamEntry& ParamVector::entry(std::size_t i) {
  if (i >= entries_.size()) throw IndexError("param entry index out of range");
  return entries_[i];
}

const ParamEntry& ParamVector::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw LookupError("no param entry named " + name);
}

bool ParamVector::has(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

ParamVector ParamVector::clone() const {
  ParamVector out;
  for (const auto& e : entries_) out.add(e.name, e.shape, *e.values);
  return out;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  for (const auto& e : entries_) out.add_zeros(e.name, e.shape);
  return out;
}

bool ParamVector::same_structure(const ParamVector& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].shape != other.entries_[i].shape) {
      return false;
    }
  }
  return true;
}

void ParamVector::check_combinable(const ParamVector& other) const {
  if (!same_structure(other)) {
    throw ShapeError("param vectors are not combinable (names/shapes differ)");
  }
}

void ParamVector::add_scaled(const ParamVector& other, double alpha) {
  check_combinable(other);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = *entries_[i].values;
    const auto& src = *other.entries_[i].values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += alpha * src[j];
  }
}

void ParamVector::scale(double c) {
  for (auto& e : entries_)
    for (auto& x : *e.values) x *= c;
}

void ParamVector::divide(double c) {
  for (auto& e : entries_)
    for (auto& x : *e.values) x /= c;
}

double ParamVector::global_norm() const {
  double acc = 0.0;
  for (const auto& e : entries_)
    for (double x : *e.values) acc += x * x;
  return std::sqrt(acc);
}

bool ParamVector::all_finite() const {
  for (const auto& e : entries_)
    for (double x : *e.values) {
      if (!std::isfinite(x)) return false;
    }
  return true;
}

ParamVector ParamVector::sub(const ParamVector& a, const ParamVector& b) {
  a.check_combinable(b);
  ParamVector out = a.clone();
  out.add_scaled(b, -1.0);
  return out;
}

ParamVector ParamVector::mean(const std::vector<const ParamVector*>& vs) {
  if (vs.empty()) throw UsageError("mean of zero param vectors");
  for (const auto* v : vs) {
    if (!v) throw UsageError("mean: null param vector");
    vs[0]->check_combinable(*v);
  }
  // Anchored mean: v0 + sum(vi - v0)/n, summed left-to-right.  Identical
  // inputs give a zero correction, so the mean of equal vectors is bitwise
  // equal to them for any n (the FedAvg fixed-point invariant).
  ParamVector out = vs[0]->clone();
  const double n = static_cast<double>(vs.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    auto& dst = *out.entry(e).values;
    const auto& anchor = *vs[0]->entry(e).values;
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double corr = 0.0;
      for (std::size_t i = 1; i < vs.size(); ++i) {
        corr += (*vs[i]->entry(e).values)[j] - anchor[j];
      }
      // a zero correction must hand back the anchor's exact bit pattern
      // (adding 0.0/n would flip a -0.0 anchor to +0.0)
      if (corr != 0.0) dst[j] = anchor[j] + corr / n;
    }
  }
  return out;
}

std::vector<double> ParamVector::flatten() const {
  std::vector<double> out;
  out.reserve(total_len());
  for (const auto& e : entries_) out.insert(out.end(), e.values->begin(), e.values->end());
  return out;
}

void ParamVector::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != total_len()) {
    throw ShapeError("assign_flat: length mismatch");
  }
  std::size_t off = 0;
  for (auto& e : entries_) {
    for (auto& x : *e.values) x = flat[off++];
  }
}

}  // namespace fedsim
