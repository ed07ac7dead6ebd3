#include "rfseg/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfseg {

double compute_miou(const std::vector<Eigen::VectorXi>& pred,
                    const std::vector<Eigen::VectorXi>& gt,
                    const std::vector<int>& eval_classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("compute_miou: cloud count mismatch");
  double sum = 0.0;
  int counted = 0;
  for (int cls : eval_classes) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t q = 0; q < pred.size(); ++q) {
      if (pred[q].size() != gt[q].size())
        throw std::invalid_argument("compute_miou: point count mismatch");
      for (Index i = 0; i < pred[q].size(); ++i) {
        const bool p = pred[q](i) == cls;
        const bool g = gt[q](i) == cls;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
    }
    if (tp + fp + fn == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++counted;
  }
  return counted > 0 ? sum / counted : 0.0;
}

double episode_clean_fraction(const Episode& episode,
                              const std::vector<std::vector<int>>* retained) {
  double acc = 0.0;
  for (int n = 0; n < episode.n_way; ++n) {
    const auto& shots = episode.support[static_cast<size_t>(n)];
    long clean = 0, count = 0;
    if (retained) {
      for (int idx : (*retained)[static_cast<size_t>(n)]) {
        clean += shots[static_cast<size_t>(idx)].clean();
        ++count;
      }
    } else {
      for (const SupportShot& s : shots) {
        clean += s.clean();
        ++count;
      }
    }
    if (count == 0) throw std::invalid_argument("episode_clean_fraction: empty way");
    acc += static_cast<double>(clean) / static_cast<double>(count);
  }
  return acc / episode.n_way;
}

void PurityHistogram::add(double purity) {
  if (purity < 0.0 || purity > 1.0)
    throw std::invalid_argument("PurityHistogram: purity outside [0,1]");
  int bin = static_cast<int>(purity * 10.0);
  if (bin > 9) bin = 9;
  ++bins[static_cast<size_t>(bin)];
  ++total;
}

double PurityHistogram::mid_mass() const {
  if (total == 0) return 0.0;
  long mid = 0;
  for (int b = 1; b <= 8; ++b) mid += bins[static_cast<size_t>(b)];
  return static_cast<double>(mid) / static_cast<double>(total);
}

nlohmann::json PurityHistogram::to_json() const {
  return {{"bins", bins}, {"total", total}, {"mid_mass", mid_mass()}};
}

void MetricsReport::validate() const {
  if (miou_mean < 0.0 || miou_mean > 1.0) throw std::logic_error("MetricsReport: mIoU range");
  for (double v : miou_per_episode)
    if (v < 0.0 || v > 1.0) throw std::logic_error("MetricsReport: mIoU range");
  if (clean_ratio_before < 0.0 || clean_ratio_before > 1.0 || clean_ratio_after < 0.0 ||
      clean_ratio_after > 1.0)
    throw std::logic_error("MetricsReport: clean ratio range");
  long n = 0;
  for (long b : purity.bins) n += b;
  if (n != purity.total) throw std::logic_error("MetricsReport: histogram mass");
  if (static_cast<int>(miou_per_episode.size()) != episode_count)
    throw std::logic_error("MetricsReport: episode count");
}

nlohmann::json MetricsReport::to_json() const {
  return {{"episodes", episode_count},
          {"miou_mean", miou_mean},
          {"miou_per_episode", miou_per_episode},
          {"clean_ratio_before", clean_ratio_before},
          {"clean_ratio_after", clean_ratio_after},
          {"purity_histogram", purity.to_json()},
          {"config", config_echo},
          {"wall_time_s", wall_time_s}};
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "episode,miou\n";
  for (size_t i = 0; i < miou_per_episode.size(); ++i)
    out << i << ',' << miou_per_episode[i] << '\n';
  return out.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-22s %10s\n", "metric", "value");
  out << line;
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof(line), "%-22s %10.4f\n", name, v);
    out << line;
  };
  row("miou_mean", miou_mean);
  row("clean_ratio_before", clean_ratio_before);
  row("clean_ratio_after", clean_ratio_after);
  row("purity_mid_mass", purity.mid_mass());
  std::snprintf(line, sizeof(line), "%-22s %10d\n", "episodes", episode_count);
  out << line;
  return out.str();
}

}  // namespace rfseg
