#include "scca/layers.hpp"

namespace scca::nn {

nk::Var param(Context& ctx, const std::string& path) { return ctx.tape.param(ctx.store.param(path)); }

void init_conv(nk::ParameterStore& store, const std::string& path, std::size_t out, std::size_t in, std::size_t k,
               std::uint64_t seed, bool bias) {
  store.add(path + "/w", nk::kaiming_normal({out, in, k, k}, in * k * k, seed, path + "/w"));
  if (bias) store.add(path + "/b", nk::Tensor({out}, 0.0), false);
}

void init_batchnorm(nk::ParameterStore& store, const std::string& path, std::size_t channels) {
  store.add(path + "/gamma", nk::Tensor({channels}, 1.0), false);
  store.add(path + "/beta", nk::Tensor({channels}, 0.0), false);
  store.add_buffer(path + "/running_mean", nk::Tensor({channels}, 0.0));
  store.add_buffer(path + "/running_var", nk::Tensor({channels}, 1.0));
}

void init_linear(nk::ParameterStore& store, const std::string& path, std::size_t in, std::size_t out,
                 std::uint64_t seed, double bias_fill) {
  store.add(path + "/w", nk::kaiming_normal({in, out}, in, seed, path + "/w"));
  store.add(path + "/b", nk::Tensor({out}, bias_fill), false);
}

nk::Var conv(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad) {
  nk::Var y = nk::conv2d(x, param(ctx, path + "/w"), stride, pad);
  if (ctx.store.has_param(path + "/b")) y = nk::add_channel_bias(y, param(ctx, path + "/b"));
  return y;
}

nk::Var batchnorm(Context& ctx, const std::string& path, const nk::Var& x) {
  nk::BatchNormState st;
  st.running_mean = &ctx.store.buffer(path + "/running_mean");
  st.running_var = &ctx.store.buffer(path + "/running_var");
  return nk::batchnorm(x, param(ctx, path + "/gamma"), param(ctx, path + "/beta"), st, ctx.mode);
}

nk::Var linear(Context& ctx, const std::string& path, const nk::Var& x) {
  return nk::add_channel_bias(nk::matmul(x, param(ctx, path + "/w")), param(ctx, path + "/b"));
}

void init_conv_bn(nk::ParameterStore& store, const std::string& path, std::size_t out, std::size_t in, std::size_t k,
                  std::uint64_t seed) {
  init_conv(store, path + "/conv", out, in, k, seed);
  init_batchnorm(store, path + "/bn", out);
}

nk::Var conv_bn(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad) {
  return batchnorm(ctx, path + "/bn", conv(ctx, path + "/conv", x, stride, pad));
}

nk::Var conv_bn_relu(Context& ctx, const std::string& path, const nk::Var& x, std::size_t stride, std::size_t pad) {
  return nk::relu(conv_bn(ctx, path, x, stride, pad));
}

}  // namespace scca::nn
