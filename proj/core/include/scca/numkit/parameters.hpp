#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "scca/numkit/tensor.hpp"

namespace scca::nk {

// A trainable tensor with its accumulated gradient. `decay` is false for
// parameters excluded from weight decay (batch-norm scale and shift, biases).
struct Parameter {
  std::string path;
  Tensor value;
  Tensor grad;
  bool decay = true;
};

// Owns every parameter and non-trainable buffer of a model, keyed by canonical
// slash-separated paths. References returned by add()/buffer() stay valid for
// the lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& path, Tensor init, bool decay = true);
  Tensor& add_buffer(const std::string& path, Tensor init);

  Parameter& param(const std::string& path);
  const Parameter& param(const std::string& path) const;
  Tensor& buffer(const std::string& path);
  const Tensor& buffer(const std::string& path) const;
  bool has_param(const std::string& path) const { return params_.count(path) != 0; }

  std::map<std::string, Parameter>& params() { return params_; }
  const std::map<std::string, Parameter>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  // Total scalar count of trainable parameters whose path starts with prefix.
  std::size_t count(const std::string& prefix = "") const;
  void zero_grad();

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, Tensor> buffers_;
};

// Fan-in scaled normal initialisation drawn from a stream derived from
// (seed, path), so a parameter's initial value does not depend on which other
// parameters exist.
Tensor kaiming_normal(const Shape& shape, std::size_t fan_in, std::uint64_t seed, const std::string& path);

}  // namespace scca::nk
