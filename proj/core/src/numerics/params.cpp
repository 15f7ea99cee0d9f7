#include "adma/numerics/params.hpp"

#include <algorithm>
#include <stdexcept>

#include "adma/error.hpp"

namespace adma::numerics {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

Tensor& ParamStore::add_zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }

Tensor& ParamStore::add_full(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

Tensor& ParamStore::add_trunc_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.truncated_normal(stddev);
  return add(name, Tensor::from(std::move(shape), std::move(data)));
}

bool ParamStore::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].clone());
  return out;
}

void ParamStore::copy_from(const ParamStore& other) {
  if (other.names_ != names_) throw DimensionError("ParamStore::copy_from: parameter lists differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (other.tensors_[i].shape() != tensors_[i].shape()) {
      throw DimensionError("ParamStore::copy_from: shape mismatch for '" + names_[i] + "'");
    }
    auto dst = tensors_[i].mutable_data();
    const auto src = other.tensors_[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace adma::numerics
