#include "scca/numkit/parameters.hpp"

#include <cmath>
#include <stdexcept>

#include "scca/rng.hpp"

namespace scca::nk {

Parameter& ParameterStore::add(const std::string& path, Tensor init, bool decay) {
  if (params_.count(path) || buffers_.count(path)) throw std::invalid_argument("duplicate parameter path: " + path);
  Tensor grad(init.shape(), 0.0);
  auto [it, _] = params_.emplace(path, Parameter{path, std::move(init), std::move(grad), decay});
  return it->second;
}

Tensor& ParameterStore::add_buffer(const std::string& path, Tensor init) {
  if (params_.count(path) || buffers_.count(path)) throw std::invalid_argument("duplicate buffer path: " + path);
  auto [it, _] = buffers_.emplace(path, std::move(init));
  return it->second;
}

Parameter& ParameterStore::param(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

const Parameter& ParameterStore::param(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

Tensor& ParameterStore::buffer(const std::string& path) {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer: " + path);
  return it->second;
}

const Tensor& ParameterStore::buffer(const std::string& path) const {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer: " + path);
  return it->second;
}

std::size_t ParameterStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [path, p] : params_) {
    if (path.compare(0, prefix.size(), prefix) == 0) n += p.value.size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

Tensor kaiming_normal(const Shape& shape, std::size_t fan_in, std::uint64_t seed, const std::string& path) {
  Rng rng(seed ^ hash_string(path));
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace scca::nk
