#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>
#include <string>
#include <vector>

#include "scca/dataset.hpp"
#include "scca/numkit/tensor.hpp"

namespace scca::eval {

// Mean Euclidean landmark error divided by the distance between the two eye
// landmarks of the ground truth. Throws when the eye landmarks coincide.
double sample_nme(const std::vector<data::Point>& pred, const std::vector<data::Point>& gt,
                  std::pair<std::size_t, std::size_t> eyes);
// pred and gt as [N, 2] tensors.
double sample_nme(const nk::Tensor& pred, const nk::Tensor& gt, std::pair<std::size_t, std::size_t> eyes);

struct EvalReport {
  std::vector<double> errors;          // per-sample normalised error
  double nme = 0.0;                    // mean error, percent
  double failure_rate = 0.0;           // percent of samples above the threshold
  double auc = 0.0;                    // normalised area under the CED curve
  double fail_threshold = 0.1;
  double auc_max = 0.1;
  std::vector<double> ced_thresholds;  // uniform on [0, auc_max]
  std::vector<double> ced_fraction;    // fraction of errors <= threshold
};

// Throws for an empty error list or non-finite errors.
EvalReport aggregate(const std::vector<double>& errors, double fail_threshold = 0.1, double auc_max = 0.1,
                     std::size_t ced_points = 1000);

// One-row summary (samples, nme, fr, auc) and the CED curve.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
void write_ced_csv(const std::filesystem::path& path, const EvalReport& report);
void write_errors_csv(const std::filesystem::path& path, const std::vector<std::string>& ids, const EvalReport& report);

}  // namespace scca::eval
