#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scca/numkit/parameters.hpp"
#include "scca/numkit/tape.hpp"

namespace scca::nk {

struct GradCheckOptions {
  std::size_t per_family = 20;
  double step = 1e-5;
  double tolerance = 1e-5;  // relative
  double abs_floor = 1e-8;   // absolute differences below this always pass
  std::uint64_t seed = 0;
};

struct GradCheckRow {
  std::string family;
  std::string path;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradCheckResult {
  std::vector<GradCheckRow> rows;
  // Entries passed over because the central differences at step h and 2h
  // disagree, i.e. a ReLU, max or loss kink lies within the stencil.
  std::size_t skipped = 0;
};

// |a - n| / max(|a|, |n|); 0 when both are 0.
double relative_error(double analytic, double numeric);

// Path with every digit replaced by '#', so that e.g. all graph blocks form
// one family.
std::string digit_family(const std::string& path);

// Compares the backward gradient of a scalar loss against central differences
// for `per_family` randomly chosen entries of every parameter family. `loss`
// records the full computation on a fresh tape each time it is called;
// `family` maps a parameter path to its family name. Buffers are restored
// afterwards.
GradCheckResult check_gradients(ParameterStore& store, const std::function<Var(Tape&)>& loss,
                                          const std::function<std::string(const std::string&)>& family,
                                          const GradCheckOptions& options = {});

}  // namespace scca::nk
