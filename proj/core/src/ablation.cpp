#include "scca/ablation.hpp"

#include <stdexcept>

#include "scca/csv.hpp"

namespace scca::train {

std::vector<AblationCell> ablation_grid(const TrainConfig& base) {
  std::vector<AblationCell> cells{{"base", "base", "", base}};
  auto add = [&](const std::string& factor, const std::string& value) {
    const auto current = to_key_values(base).at(factor);
    if (current == value) return;
    AblationCell c{factor + "=" + value, factor, value, base};
    apply_key_value(c.config, factor, value);
    cells.push_back(std::move(c));
  };
  add("head", "fc");
  add("attention", "off");
  add("attention", "self");
  add("loss", "l1");
  add("loss", "wing");
  for (const char* k : {"1", "2", "4", "5", "10"}) add("k", k);
  add("dynamic", "false");
  return cells;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationCell>& cells,
                        const std::vector<AblationRun>& runs) {
  CsvWriter w(path, {"cell", "factor", "value", "head", "attention", "loss", "k", "dynamic", "seed", "nme", "fr",
                     "auc"});
  for (const auto& cell : cells) {
    const auto kv = to_key_values(cell.config);
    const std::vector<std::string> prefix{cell.name, cell.factor, cell.value, kv.at("head"), kv.at("attention"),
                                          kv.at("loss"), kv.at("k"), kv.at("dynamic")};
    double nme = 0, fr = 0, auc = 0;
    std::size_t count = 0;
    for (const auto& r : runs) {
      if (r.cell != cell.name) continue;
      auto row = prefix;
      row.insert(row.end(), {std::to_string(r.seed), format_double(r.report.nme), format_double(r.report.failure_rate),
                             format_double(r.report.auc)});
      w.row(row);
      nme += r.report.nme;
      fr += r.report.failure_rate;
      auc += r.report.auc;
      ++count;
    }
    if (count == 0) throw std::invalid_argument("ablation: no runs for cell " + cell.name);
    auto row = prefix;
    const double c = static_cast<double>(count);
    row.insert(row.end(), {"mean", format_double(nme / c), format_double(fr / c), format_double(auc / c)});
    w.row(row);
  }
}

}  // namespace scca::train
