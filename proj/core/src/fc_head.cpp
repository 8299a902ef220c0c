#include <stdexcept>

#include "scca/scc.hpp"

namespace scca::net {

void init_fc_head(nk::ParameterStore& store, std::size_t fused, std::size_t hidden, std::size_t landmarks,
                  std::uint64_t seed) {
  if (hidden == 0) throw std::invalid_argument("fc head: hidden width must be positive");
  nn::init_linear(store, "fc/hidden", fused, hidden, seed);
  nn::init_linear(store, "fc/out", hidden, 2 * landmarks, seed, 0.5 * kHeadFrame);
}

nk::Var fc_head_forward(nn::Context& ctx, const nk::Var& fused, std::size_t landmarks) {
  const auto& w = ctx.store.param("fc/hidden/w").value;
  if (fused.value().rank() != 4 || fused.dim(1) != w.dim(0)) {
    throw std::invalid_argument("fc head: expected " + std::to_string(w.dim(0)) + " input channels, got " +
                                nk::shape_string(fused.shape()));
  }
  nk::Var h = nk::relu(nn::linear(ctx, "fc/hidden", nk::global_pool(fused, nk::PoolMode::Avg)));
  nk::Var out = nn::linear(ctx, "fc/out", h);
  if (out.dim(1) != 2 * landmarks) throw std::invalid_argument("fc head: output width does not match 2N");
  return nk::reshape(out, {fused.dim(0), landmarks, 2});
}

std::size_t matched_fc_hidden(std::size_t budget, std::size_t fused, std::size_t landmarks) {
  // (fused + 1) h + (h + 1) 2N = budget
  const std::size_t per_unit = fused + 1 + 2 * landmarks;
  const std::size_t fixed = 2 * landmarks;
  if (budget <= fixed + per_unit) return 1;
  const std::size_t lo = (budget - fixed) / per_unit;
  const auto cost = [&](std::size_t h) { return h * per_unit + fixed; };
  return budget - cost(lo) <= cost(lo + 1) - budget ? lo : lo + 1;
}

}  // namespace scca::net
