#pragma once

#include <array>
#include <string>
#include <vector>

#include "rfseg/types.hpp"

#include <json.hpp>

namespace rfseg {

/// Pooled per-class IoU over all query points of an episode, averaged over
/// the foreground classes. Classes absent from both prediction and ground
/// truth are skipped.
double compute_miou(const std::vector<Eigen::VectorXi>& pred,
                    const std::vector<Eigen::VectorXi>& gt,
                    const std::vector<int>& eval_classes);

/// Clean-shot fraction averaged over ways; `retained` (when non-null) gives
/// the per-way index subsets to score instead of the full support.
double episode_clean_fraction(const Episode& episode,
                              const std::vector<std::vector<int>>* retained = nullptr);

/// Ten purity bins [0,0.1) ... [0.9,1.0]; mid-range mass is the fraction in
/// [0.1, 0.9).
struct PurityHistogram {
  std::array<long, 10> bins{};
  long total = 0;

  void add(double purity);
  double mid_mass() const;
  nlohmann::json to_json() const;
};

struct MetricsReport {
  std::vector<double> miou_per_episode;
  double miou_mean = 0.0;
  double clean_ratio_before = 1.0;
  double clean_ratio_after = 1.0;
  PurityHistogram purity;
  int episode_count = 0;
  double wall_time_s = 0.0;
  nlohmann::json config_echo;

  void validate() const;
  /// Deterministic apart from the wall_time_s field.
  nlohmann::json to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
};

}  // namespace rfseg
