#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adma/numerics/rng.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::numerics {

/// Ordered collection of named trainable leaves. Order is registration order
/// and defines the checkpoint layout and the optimizer state layout.
class ParamStore {
 public:
  /// Registers a gradient-tracked leaf. Duplicate names throw std::invalid_argument.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_zeros(const std::string& name, Shape shape);
  Tensor& add_full(const std::string& name, Shape shape, double value);
  /// Truncated normal (|z| <= 2 sd).
  Tensor& add_trunc_normal(const std::string& name, Shape shape, double stddev, Rng& rng);

  [[nodiscard]] std::size_t size() const noexcept { return tensors_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] std::vector<Tensor>& tensors() noexcept { return tensors_; }
  [[nodiscard]] const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  [[nodiscard]] bool contains(const std::string& name) const;
  /// Throws std::out_of_range for unknown names.
  [[nodiscard]] const Tensor& get(const std::string& name) const;
  [[nodiscard]] std::size_t num_scalars() const;

  void zero_grad();
  /// Independent copy of every value, gradient-tracked like the source.
  [[nodiscard]] ParamStore clone() const;
  /// Overwrites values from `other` (same names and shapes, else DimensionError).
  void copy_from(const ParamStore& other);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

}  // namespace adma::numerics
