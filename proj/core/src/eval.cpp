#include "scca/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scca/csv.hpp"

namespace scca::eval {

double sample_nme(const std::vector<data::Point>& pred, const std::vector<data::Point>& gt,
                  std::pair<std::size_t, std::size_t> eyes) {
  if (pred.size() != gt.size() || gt.empty()) throw std::invalid_argument("sample_nme: landmark counts differ");
  if (eyes.first >= gt.size() || eyes.second >= gt.size()) throw std::invalid_argument("sample_nme: eye index out of range");
  const data::Point& l = gt[eyes.first];
  const data::Point& r = gt[eyes.second];
  const double iod = std::hypot(l.x - r.x, l.y - r.y);
  if (!(iod > 0)) throw std::invalid_argument("sample_nme: eye landmarks coincide");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) total += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return total / static_cast<double>(gt.size()) / iod;
}

double sample_nme(const nk::Tensor& pred, const nk::Tensor& gt, std::pair<std::size_t, std::size_t> eyes) {
  if (pred.shape() != gt.shape() || gt.rank() != 2 || gt.dim(1) != 2) {
    throw std::invalid_argument("sample_nme: expected matching [N, 2] tensors");
  }
  std::vector<data::Point> p(gt.dim(0)), g(gt.dim(0));
  for (std::size_t i = 0; i < gt.dim(0); ++i) {
    p[i] = {pred[2 * i], pred[2 * i + 1]};
    g[i] = {gt[2 * i], gt[2 * i + 1]};
  }
  return sample_nme(p, g, eyes);
}

EvalReport aggregate(const std::vector<double>& errors, double fail_threshold, double auc_max, std::size_t ced_points) {
  if (errors.empty()) throw std::invalid_argument("aggregate: no errors to summarise");
  if (!(auc_max > 0) || ced_points < 2) throw std::invalid_argument("aggregate: bad CED range");
  for (double e : errors)
    if (!std::isfinite(e) || e < 0) throw std::invalid_argument("aggregate: errors must be finite and non-negative");

  EvalReport r;
  r.errors = errors;
  r.fail_threshold = fail_threshold;
  r.auc_max = auc_max;
  const double n = static_cast<double>(errors.size());

  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double e : sorted) sum += e;
  r.nme = sum / n * 100.0;
  const auto failures = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), fail_threshold));
  r.failure_rate = failures / n * 100.0;

  r.ced_thresholds.resize(ced_points);
  r.ced_fraction.resize(ced_points);
  for (std::size_t i = 0; i < ced_points; ++i) {
    const double t = auc_max * static_cast<double>(i) / static_cast<double>(ced_points - 1);
    r.ced_thresholds[i] = t;
    r.ced_fraction[i] = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin()) / n;
  }
  double area = 0.0;
  for (std::size_t i = 1; i < ced_points; ++i) {
    area += 0.5 * (r.ced_fraction[i] + r.ced_fraction[i - 1]) * (r.ced_thresholds[i] - r.ced_thresholds[i - 1]);
  }
  r.auc = area / auc_max;
  return r;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  CsvWriter w(path, {"samples", "nme_percent", "fr_percent", "auc", "fail_threshold", "auc_max"});
  w.row(std::vector<double>{static_cast<double>(report.errors.size()), report.nme, report.failure_rate, report.auc,
                            report.fail_threshold, report.auc_max});
}

void write_ced_csv(const std::filesystem::path& path, const EvalReport& report) {
  CsvWriter w(path, {"threshold", "fraction"});
  for (std::size_t i = 0; i < report.ced_thresholds.size(); ++i) {
    w.row(std::vector<double>{report.ced_thresholds[i], report.ced_fraction[i]});
  }
}

void write_errors_csv(const std::filesystem::path& path, const std::vector<std::string>& ids, const EvalReport& report) {
  if (ids.size() != report.errors.size()) throw std::invalid_argument("write_errors_csv: id count mismatch");
  CsvWriter w(path, {"id", "nme"});
  for (std::size_t i = 0; i < ids.size(); ++i) w.row(std::vector<std::string>{ids[i], format_double(report.errors[i])});
}

}  // namespace scca::eval
