#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "xmad/errors.hpp"

namespace xmad {

/// Dense row-major array of 64-bit reals. Value type; safe to copy and share.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ContractError("Tensor: shape dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ContractError("Tensor: shape dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    if (n != data_.size()) throw ContractError("Tensor: data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double item() const {
    if (!is_scalar()) throw ContractError("Tensor::item: tensor is not scalar");
    return data_[0];
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Sentinel used for masked logits; exp() of anything this small underflows to 0.
inline constexpr double kMaskedLogit = -1e30;

inline double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Temperature softmax over a flat vector with an optional validity mask.
/// Masked entries come out exactly 0; unmasked entries sum to 1. Masking works
/// by pinning masked logits to kMaskedLogit before the stabilized exp.
inline std::vector<double> masked_softmax(const std::vector<double>& logits, double temperature,
                                          const std::vector<std::uint8_t>* mask = nullptr) {
  if (temperature <= 0.0) throw DomainError("softmax: temperature must be positive");
  if (mask != nullptr && mask->size() != logits.size())
    throw ContractError("softmax: mask length does not match logits");
  const std::size_t n = logits.size();
  if (n == 0) throw DomainError("softmax: empty input");

  double hi = kMaskedLogit;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    ++valid;
    hi = std::max(hi, logits[i]);
  }
  if (valid == 0) throw DomainError("softmax: all entries masked");

  std::vector<double> out(n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    out[i] = std::exp((logits[i] - hi) / temperature);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  return out;
}

}  // namespace xmad
