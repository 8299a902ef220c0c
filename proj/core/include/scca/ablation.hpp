#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scca/config.hpp"
#include "scca/eval.hpp"

namespace scca::train {

// One grid cell: the base configuration with a single factor switched.
struct AblationCell {
  std::string name;    // e.g. "head=fc"; "base" for the unmodified config
  std::string factor;  // head | attention | loss | k | dynamic | base
  std::string value;
  TrainConfig config;
};

// Base cell followed by head {fc}, attention {off, self}, loss {l1, wing},
// k in {1, 2, 4, 5, 10} and dynamic {off}, skipping values equal to the base.
std::vector<AblationCell> ablation_grid(const TrainConfig& base);

struct AblationRun {
  std::string cell;
  std::uint64_t seed = 0;
  eval::EvalReport report;
};

// Per-run rows plus one seed-averaged row per cell (seed column "mean").
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationCell>& cells,
                        const std::vector<AblationRun>& runs);

}  // namespace scca::train
