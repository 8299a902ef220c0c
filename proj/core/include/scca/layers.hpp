#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "scca/numkit/ops.hpp"
#include "scca/numkit/parameters.hpp"
#include "scca/numkit/tape.hpp"

// Parameter-store backed building blocks shared by the network modules. Each
// layer owns the parameters under its path prefix.
namespace scca::nn {

// Everything a forward pass needs besides its input.
struct Context {
  nk::Tape& tape;
  nk::ParameterStore& store;
  nk::BnMode mode = nk::BnMode::Train;
};

nk::Var param(Context& ctx, const std::string& path);

// `<path>/w` [out, in, k, k]; with bias also `<path>/b` [out], zero-initialised.
void init_conv(nk::ParameterStore& store, const std::string& path, std::size_t out, std::size_t in, std::size_t k,
               std::uint64_t seed, bool bias = false);
// `<path>/gamma` = 1, `<path>/beta` = 0, running mean 0 and variance 1.
void init_batchnorm(nk::ParameterStore& store, const std::string& path, std::size_t channels);
// `<path>/w` [in, out] and `<path>/b` [out] (zero unless bias_fill is given).
void init_linear(nk::ParameterStore& store, const std::string& path, std::size_t in, std::size_t out,
                 std::uint64_t seed, double bias_fill = 0.0);

nk::Var conv(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad);
nk::Var batchnorm(Context& ctx, const std::string& path, const nk::Var& x);
// x [R, in] -> [R, out]
nk::Var linear(Context& ctx, const std::string& path, const nk::Var& x);

void init_conv_bn(nk::ParameterStore& store, const std::string& path, std::size_t out, std::size_t in, std::size_t k,
                  std::uint64_t seed);
// conv (no bias) -> batch norm -> ReLU, using `<path>/conv` and `<path>/bn`.
nk::Var conv_bn_relu(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad);
nk::Var conv_bn(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad);

}  // namespace scca::nn
