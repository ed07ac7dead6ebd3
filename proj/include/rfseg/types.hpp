#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfseg {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixX3f = Eigen::Matrix<float, Eigen::Dynamic, 3>;
using ArrayXb = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Per-point input feature width: xyz, rgb, normalized xyz.
inline constexpr int kInputDim = 9;

/// Episode label reserved for background.
inline constexpr int kBackgroundLabel = 0;

/// One scene block: point coordinates (meters), colors in [0,1], and a
/// dataset class id per point.
struct PointCloud {
  MatrixX3f coords;
  MatrixX3f colors;
  Eigen::VectorXi labels;

  Index size() const { return coords.rows(); }

  void validate() const {
    if (size() == 0) throw std::invalid_argument("PointCloud: empty cloud");
    if (colors.rows() != size() || labels.size() != size())
      throw std::invalid_argument("PointCloud: field size mismatch");
    if (!coords.allFinite() || !colors.allFinite())
      throw std::invalid_argument("PointCloud: non-finite entries");
    if ((colors.array() < 0.0f).any() || (colors.array() > 1.0f).any())
      throw std::invalid_argument("PointCloud: colors outside [0,1]");
  }
};

/// A support sample: cloud plus the binary foreground mask of the declared
/// class. `true_class` is the actual class of the masked object; it is kept
/// only for noise bookkeeping and never shown to the model.
struct SupportShot {
  PointCloud cloud;
  ArrayXb mask;
  int declared_class = -1;
  int true_class = -1;

  bool clean() const { return declared_class == true_class; }
  Index foreground_count() const { return mask.count(); }
};

enum class NoiseKind { none, in_episode, out_episode };

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::in_episode: return "in_episode";
    case NoiseKind::out_episode: return "out_episode";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "in_episode") return NoiseKind::in_episode;
  if (s == "out_episode") return NoiseKind::out_episode;
  throw std::invalid_argument("unknown noise kind: " + s);
}

struct NoiseConfig {
  NoiseKind kind = NoiseKind::none;
  double ratio = 0.0;

  int noisy_count(int k_shot) const {
    return kind == NoiseKind::none ? 0 : static_cast<int>(std::lround(ratio * k_shot));
  }

  void validate() const {
    const double allowed[] = {0.0, 0.2, 0.4, 0.6};
    bool ok = false;
    for (double a : allowed) ok = ok || std::abs(ratio - a) < 1e-12;
    if (!ok) throw std::invalid_argument("NoiseConfig: ratio must be in {0,0.2,0.4,0.6}");
    if (kind == NoiseKind::in_episode && ratio > 0.4 + 1e-12)
      throw std::invalid_argument("NoiseConfig: in-episode ratio capped at 0.4");
    if (kind == NoiseKind::out_episode && ratio > 0.6 + 1e-12)
      throw std::invalid_argument("NoiseConfig: out-episode ratio capped at 0.6");
    if (kind == NoiseKind::none && ratio != 0.0)
      throw std::invalid_argument("NoiseConfig: kind none requires ratio 0");
  }
};

/// N-way K-shot task: support shots per way plus T query clouds with
/// episode-level ground truth (0 = background, 1..N = way index).
struct Episode {
  int n_way = 0;
  int k_shot = 0;
  std::vector<int> way_classes;
  std::vector<std::vector<SupportShot>> support;
  std::vector<PointCloud> queries;
  std::vector<Eigen::VectorXi> query_labels;
  NoiseConfig noise;

  void validate() const {
    if (n_way <= 0 || k_shot <= 0) throw std::invalid_argument("Episode: empty task");
    if (static_cast<int>(way_classes.size()) != n_way ||
        static_cast<int>(support.size()) != n_way)
      throw std::invalid_argument("Episode: way count mismatch");
    for (int a = 0; a < n_way; ++a)
      for (int b = a + 1; b < n_way; ++b)
        if (way_classes[a] == way_classes[b])
          throw std::invalid_argument("Episode: duplicate way class");
    if (queries.size() != query_labels.size())
      throw std::invalid_argument("Episode: query label mismatch");
    for (int n = 0; n < n_way; ++n) {
      if (static_cast<int>(support[n].size()) != k_shot)
        throw std::invalid_argument("Episode: shot count mismatch");
      // Clean shots must strictly outnumber every single noisy class.
      int clean = 0;
      std::vector<std::pair<int, int>> noisy;  // (true class, count)
      for (const SupportShot& s : support[n]) {
        if (s.clean()) {
          ++clean;
          continue;
        }
        bool found = false;
        for (auto& [c, cnt] : noisy)
          if (c == s.true_class) {
            ++cnt;
            found = true;
          }
        if (!found) noisy.emplace_back(s.true_class, 1);
      }
      for (auto& [c, cnt] : noisy)
        if (cnt >= clean)
          throw std::invalid_argument("Episode: clean shots do not outnumber noisy class");
    }
  }
};

/// Axis-aligned cut counts for sub-shot splitting; (1,1,1) is the coarsest
/// scale with a single cell.
struct ScaleSpec {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  int cells() const { return nx * ny * nz; }

  void validate() const {
    if (nx < 1 || ny < 1 || nz < 1) throw std::invalid_argument("ScaleSpec: cuts must be >= 1");
  }
};

}  // namespace rfseg
