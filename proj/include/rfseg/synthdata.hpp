#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "rfseg/rng.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

/// Geometry/appearance signature of one class: primitive kind, size range,
/// color distribution, and surface jitter.
struct ClassShape {
  enum class Kind { plane, box, sphere, cylinder };

  int id = 0;
  std::string name;
  Kind kind = Kind::box;
  float size_lo = 0.1f;
  float size_hi = 0.3f;
  Eigen::Vector3f color_mean = Eigen::Vector3f::Constant(0.5f);
  float color_spread = 0.05f;
  float sigma_geom = 0.005f;
};

/// 12-class vocabulary; class 1 is the floor plane present in every scene.
std::vector<ClassShape> default_vocabulary();

struct DatasetSplit {
  std::vector<int> base_classes;
  std::vector<int> novel_classes;

  void validate() const;
  bool is_base(int c) const;
  bool is_novel(int c) const;
};

/// First half of the vocabulary (floor included) against the second.
DatasetSplit default_split();

struct SceneInstance {
  int class_id = 0;
  ClassShape::Kind kind = ClassShape::Kind::box;
  Eigen::Vector3f center = Eigen::Vector3f::Zero();
  Eigen::Vector3f size = Eigen::Vector3f::Zero();
  Index first_point = 0;
  Index point_count = 0;
};

struct Scene {
  PointCloud cloud;
  std::vector<SceneInstance> instances;
};

/// Places a floor plane plus the listed object classes in the unit block
/// without xy overlap and samples `m` surface points with jitter.
/// Placement failures past 100 retries raise.
Scene generate_scene(const std::vector<ClassShape>& vocab,
                     const std::vector<int>& object_classes, Index m, Rng& rng);

struct Dataset {
  std::vector<ClassShape> vocab;
  DatasetSplit split;
  std::vector<PointCloud> clouds;
  std::uint64_t seed = 0;
  Index points_per_cloud = 0;

  const ClassShape& shape_of(int class_id) const;
  std::vector<int> class_ids() const;

  /// Clouds where `class_id` has at least `min_fg` points; `without` (when
  /// >= 0) additionally excludes clouds containing that class at all.
  std::vector<Index> clouds_with(int class_id, Index min_fg, int without = -1) const;
};

/// `n_scenes` scenes of `m` points each, 2-4 object classes per scene drawn
/// from the full vocabulary. Scene i depends only on (seed, i).
Dataset generate_dataset(Index n_scenes, Index m, std::uint64_t seed);

/// Episode sampling contract: way classes come from `way_pool`; noisy shots
/// replace round(ratio*K) clean ones per way, drawing their true class from
/// the other episode ways (in-episode) or `out_pool` (out-episode) under
/// the clean-majority restriction. A noisy shot's cloud never contains the
/// declared class. Queries are one cloud per way containing that way's
/// class, labelled 0..N over all episode classes.
struct EpisodeSpec {
  int n_way = 2;
  int k_shot = 5;
  int queries_per_way = 1;
  NoiseConfig noise;
  Index min_fg = 100;
  std::vector<int> way_pool;
  std::vector<int> out_pool;
};

Episode sample_episode(const Dataset& data, const EpisodeSpec& spec, Rng& rng);

/// Training-time noise: draws a ratio uniformly from the mix (default
/// {0, 0.2, 0.4}) and replaces shots in place, with true classes from the
/// base split minus the declared class. Returns the drawn ratio.
double inject_training_noise(const Dataset& data, Episode& episode, Index min_fg, Rng& rng);
double inject_training_noise(const Dataset& data, Episode& episode, Index min_fg, Rng& rng,
                             const std::vector<double>& ratio_mix);

}  // namespace rfseg
