#include "scca/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "scca/rng.hpp"

namespace scca::nk {

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  return scale == 0.0 ? 0.0 : std::fabs(analytic - numeric) / scale;
}

std::string digit_family(const std::string& path) {
  std::string f = path;
  std::replace_if(f.begin(), f.end(), [](char c) { return c >= '0' && c <= '9'; }, '#');
  return f;
}

GradCheckResult check_gradients(ParameterStore& store, const std::function<Var(Tape&)>& loss,
                                const std::function<std::string(const std::string&)>& family,
                                const GradCheckOptions& options) {
  const std::map<std::string, Tensor> saved_buffers = store.buffers();
  auto evaluate = [&] {
    Tape tape;
    const Var out = loss(tape);
    if (out.value().size() != 1) throw std::invalid_argument("gradcheck: loss must be a scalar");
    return out.value()[0];
  };
  auto central = [&](double& x, double h) {
    const double original = x;
    x = original + h;
    const double up = evaluate();
    x = original - h;
    const double down = evaluate();
    x = original;
    return (up - down) / (2.0 * h);
  };

  store.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }

  std::map<std::string, std::vector<std::pair<Parameter*, std::size_t>>> families;
  for (auto& [path, p] : store.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) families[family(path)].emplace_back(&p, i);

  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& [name, entries] : families) {
    std::size_t checked = 0;
    for (std::size_t t = 0; t < entries.size() && checked < options.per_family; ++t) {
      std::swap(entries[t], entries[t + rng.below(entries.size() - t)]);
      auto [p, i] = entries[t];
      const double numeric = central(p->value[i], options.step);
      const double wide = central(p->value[i], 2.0 * options.step);
      if (std::fabs(numeric - wide) > options.tolerance * std::max(std::fabs(numeric), std::fabs(wide)) &&
          std::fabs(numeric - wide) > options.abs_floor) {
        ++result.skipped;
        continue;
      }
      GradCheckRow row;
      row.family = name;
      row.path = p->path;
      row.index = i;
      row.analytic = p->grad.empty() ? 0.0 : p->grad[i];
      row.numeric = numeric;
      row.rel_error = relative_error(row.analytic, row.numeric);
      row.pass = row.rel_error <= options.tolerance || std::fabs(row.analytic - row.numeric) <= options.abs_floor;
      result.rows.push_back(std::move(row));
      ++checked;
    }
  }
  for (auto& [path, t] : store.buffers()) t = saved_buffers.at(path);
  return result;
}

}  // namespace scca::nk
