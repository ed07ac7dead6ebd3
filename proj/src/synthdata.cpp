#include "rfseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rfseg {

namespace {

constexpr float kBlock = 1.0f;      // block edge length in meters
constexpr float kFloorShare = 0.2f; // fraction of points given to the floor
constexpr int kPlaceRetries = 100;

float clampf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

/// Jitter clamped to +-3 sigma so every surface point stays inside the
/// inflated primitive bounds.
float jitter(Rng& rng, float sigma) {
  if (sigma <= 0.0f) return 0.0f;
  return clampf(static_cast<float>(rng.normal(0.0, sigma)), -3.0f * sigma, 3.0f * sigma);
}

Eigen::Vector3f sample_color(const ClassShape& shape, float brightness, Rng& rng) {
  Eigen::Vector3f c;
  for (int i = 0; i < 3; ++i)
    c(i) = clampf(brightness * shape.color_mean(i) +
                      static_cast<float>(rng.uniform(-shape.color_spread, shape.color_spread)),
                  0.0f, 1.0f);
  return c;
}

Eigen::Vector3f box_surface_point(const Eigen::Vector3f& size, Rng& rng) {
  const float ax = size.y() * size.z();
  const float ay = size.x() * size.z();
  const float az = size.x() * size.y();
  const float total = 2.0f * (ax + ay + az);
  float u = static_cast<float>(rng.uniform()) * total;
  const float su = static_cast<float>(rng.uniform());
  const float sv = static_cast<float>(rng.uniform());
  Eigen::Vector3f p;
  auto face = [&](int axis, float side) {
    p((axis + 1) % 3) = (su - 0.5f) * size((axis + 1) % 3);
    p((axis + 2) % 3) = (sv - 0.5f) * size((axis + 2) % 3);
    p(axis) = side * 0.5f * size(axis);
  };
  if (u < ax) face(0, -1.0f);
  else if ((u -= ax) < ax) face(0, 1.0f);
  else if ((u -= ax) < ay) face(1, -1.0f);
  else if ((u -= ay) < ay) face(1, 1.0f);
  else if ((u -= ay) < az) face(2, -1.0f);
  else face(2, 1.0f);
  return p;
}

Eigen::Vector3f sphere_surface_point(float radius, Rng& rng) {
  Eigen::Vector3f dir;
  do {
    dir = Eigen::Vector3f(static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                          static_cast<float>(rng.normal()));
  } while (dir.norm() < 1e-6f);
  return dir.normalized() * radius;
}

Eigen::Vector3f cylinder_surface_point(float radius, float height, Rng& rng) {
  const float side = 2.0f * static_cast<float>(M_PI) * radius * height;
  const float cap = static_cast<float>(M_PI) * radius * radius;
  const float u = static_cast<float>(rng.uniform()) * (side + 2.0f * cap);
  const float theta = static_cast<float>(rng.uniform(0.0, 2.0 * M_PI));
  if (u < side) {
    const float z = static_cast<float>(rng.uniform()) * height;
    return {radius * std::cos(theta), radius * std::sin(theta), z - height * 0.5f};
  }
  const float rho = radius * std::sqrt(static_cast<float>(rng.uniform()));
  const float z = u < side + cap ? -height * 0.5f : height * 0.5f;
  return {rho * std::cos(theta), rho * std::sin(theta), z};
}

float footprint_radius(const SceneInstance& inst) {
  switch (inst.kind) {
    case ClassShape::Kind::sphere:
    case ClassShape::Kind::cylinder:
      return 0.5f * inst.size.x();
    default:
      return 0.5f * std::hypot(inst.size.x(), inst.size.y());
  }
}

std::vector<Index> pick_distinct(std::vector<Index> pool, size_t count, Rng& rng) {
  if (pool.size() < count) throw std::runtime_error("sample_episode: not enough candidate clouds");
  std::vector<Index> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const int j = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    out.push_back(pool[static_cast<size_t>(j)]);
    pool[static_cast<size_t>(j)] = pool.back();
    pool.pop_back();
  }
  return out;
}

void remove_used(std::vector<Index>& pool, const std::vector<Index>& used) {
  pool.erase(std::remove_if(pool.begin(), pool.end(),
                            [&](Index c) {
                              return std::find(used.begin(), used.end(), c) != used.end();
                            }),
             pool.end());
}

}  // namespace

std::vector<ClassShape> default_vocabulary() {
  using K = ClassShape::Kind;
  auto mk = [](int id, const char* name, K kind, float lo, float hi, float r, float g, float b) {
    ClassShape s;
    s.id = id;
    s.name = name;
    s.kind = kind;
    s.size_lo = lo;
    s.size_hi = hi;
    s.color_mean = Eigen::Vector3f(r, g, b);
    s.color_spread = 0.14f;
    s.sigma_geom = 0.012f;
    return s;
  };
  // Color means overlap under the spread so appearance alone does not
  // trivially separate the vocabulary.
  return {
      mk(1, "floor", K::plane, kBlock, kBlock, 0.45f, 0.45f, 0.45f),
      mk(2, "crate", K::box, 0.18f, 0.30f, 0.85f, 0.15f, 0.15f),
      mk(3, "ball", K::sphere, 0.16f, 0.28f, 0.15f, 0.35f, 0.85f),
      mk(4, "drum", K::cylinder, 0.20f, 0.32f, 0.15f, 0.75f, 0.25f),
      mk(5, "panel", K::box, 0.22f, 0.36f, 0.90f, 0.80f, 0.15f),
      mk(6, "post", K::cylinder, 0.08f, 0.14f, 0.60f, 0.20f, 0.70f),
      mk(7, "bin", K::box, 0.16f, 0.26f, 0.95f, 0.50f, 0.10f),
      mk(8, "globe", K::sphere, 0.22f, 0.34f, 0.10f, 0.80f, 0.80f),
      mk(9, "spool", K::cylinder, 0.14f, 0.22f, 0.85f, 0.20f, 0.55f),
      mk(10, "slab", K::box, 0.28f, 0.40f, 0.35f, 0.25f, 0.10f),
      mk(11, "orb", K::sphere, 0.10f, 0.18f, 0.75f, 0.90f, 0.60f),
      mk(12, "pipe", K::cylinder, 0.10f, 0.16f, 0.20f, 0.15f, 0.45f),
  };
}

void DatasetSplit::validate() const {
  if (base_classes.empty() || novel_classes.empty())
    throw std::invalid_argument("DatasetSplit: empty split");
  for (int b : base_classes)
    for (int n : novel_classes)
      if (b == n) throw std::invalid_argument("DatasetSplit: base and novel overlap");
}

bool DatasetSplit::is_base(int c) const {
  return std::find(base_classes.begin(), base_classes.end(), c) != base_classes.end();
}

bool DatasetSplit::is_novel(int c) const {
  return std::find(novel_classes.begin(), novel_classes.end(), c) != novel_classes.end();
}

DatasetSplit default_split() {
  DatasetSplit s;
  s.base_classes = {1, 2, 3, 4, 5, 6};
  s.novel_classes = {7, 8, 9, 10, 11, 12};
  return s;
}

Scene generate_scene(const std::vector<ClassShape>& vocab,
                     const std::vector<int>& object_classes, Index m, Rng& rng) {
  if (m <= 0) throw std::invalid_argument("generate_scene: need m > 0");
  const ClassShape* floor = nullptr;
  for (const ClassShape& s : vocab)
    if (s.kind == ClassShape::Kind::plane) {
      floor = &s;
      break;
    }
  if (!floor && object_classes.empty())
    throw std::invalid_argument("generate_scene: nothing to place");

  Scene scene;
  // Scene-level lighting: one brightness factor for every instance.
  const float brightness = static_cast<float>(rng.uniform(0.75, 1.05));

  // Place object instances with non-overlapping xy footprints.
  for (int cid : object_classes) {
    const ClassShape* shape = nullptr;
    for (const ClassShape& s : vocab)
      if (s.id == cid) shape = &s;
    if (!shape) throw std::invalid_argument("generate_scene: unknown class id");

    SceneInstance inst;
    inst.class_id = cid;
    inst.kind = shape->kind;
    switch (shape->kind) {
      case ClassShape::Kind::box:
        inst.size = Eigen::Vector3f(static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi)),
                                    static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi)),
                                    static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi)));
        break;
      case ClassShape::Kind::sphere: {
        const float d = static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi));
        inst.size = Eigen::Vector3f(d, d, d);
        break;
      }
      case ClassShape::Kind::cylinder: {
        const float d = static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi));
        const float h = static_cast<float>(rng.uniform(shape->size_lo, shape->size_hi)) * 1.5f;
        inst.size = Eigen::Vector3f(d, d, h);
        break;
      }
      case ClassShape::Kind::plane:
        throw std::invalid_argument("generate_scene: plane classes are floor-only");
    }

    const float fr = footprint_radius(inst);
    bool placed = false;
    for (int attempt = 0; attempt < kPlaceRetries && !placed; ++attempt) {
      const float margin = std::min(fr, 0.45f);
      inst.center.x() = static_cast<float>(rng.uniform(margin, kBlock - margin));
      inst.center.y() = static_cast<float>(rng.uniform(margin, kBlock - margin));
      inst.center.z() = inst.size.z() * 0.5f;
      placed = true;
      for (const SceneInstance& other : scene.instances) {
        const float dx = inst.center.x() - other.center.x();
        const float dy = inst.center.y() - other.center.y();
        if (std::hypot(dx, dy) < fr + footprint_radius(other)) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) throw std::runtime_error("generate_scene: placement failed");
    scene.instances.push_back(inst);
  }

  // Point budget: fixed floor share, remainder spread over the objects.
  const Index n_obj = static_cast<Index>(scene.instances.size());
  Index n_floor = m;
  std::vector<Index> budget(static_cast<size_t>(n_obj), 0);
  if (n_obj > 0) {
    n_floor = floor ? std::max<Index>(1, static_cast<Index>(std::lround(kFloorShare * m))) : 0;
    const Index avail = m - n_floor;
    for (Index i = 0; i < n_obj; ++i)
      budget[static_cast<size_t>(i)] = avail / n_obj + (i < avail % n_obj ? 1 : 0);
  }

  scene.cloud.coords.resize(m, 3);
  scene.cloud.colors.resize(m, 3);
  scene.cloud.labels.resize(m);
  Index w = 0;

  for (size_t oi = 0; oi < scene.instances.size(); ++oi) {
    SceneInstance& inst = scene.instances[oi];
    const ClassShape& shape = *std::find_if(vocab.begin(), vocab.end(),
                                            [&](const ClassShape& s) { return s.id == inst.class_id; });
    inst.first_point = w;
    inst.point_count = budget[oi];
    for (Index i = 0; i < budget[oi]; ++i) {
      Eigen::Vector3f p;
      switch (inst.kind) {
        case ClassShape::Kind::box:
          p = box_surface_point(inst.size, rng);
          break;
        case ClassShape::Kind::sphere:
          p = sphere_surface_point(inst.size.x() * 0.5f, rng);
          break;
        case ClassShape::Kind::cylinder:
          p = cylinder_surface_point(inst.size.x() * 0.5f, inst.size.z(), rng);
          break;
        case ClassShape::Kind::plane:
          p.setZero();
          break;
      }
      p += inst.center;
      for (int a = 0; a < 3; ++a) p(a) += jitter(rng, shape.sigma_geom);
      scene.cloud.coords.row(w) = p;
      scene.cloud.colors.row(w) = sample_color(shape, brightness, rng);
      scene.cloud.labels(w) = inst.class_id;
      ++w;
    }
  }

  if (floor && n_floor > 0) {
    SceneInstance fi;
    fi.class_id = floor->id;
    fi.kind = ClassShape::Kind::plane;
    fi.center = Eigen::Vector3f(kBlock * 0.5f, kBlock * 0.5f, 0.0f);
    fi.size = Eigen::Vector3f(kBlock, kBlock, 0.0f);
    fi.first_point = w;
    fi.point_count = n_floor;
    for (Index i = 0; i < n_floor; ++i) {
      Eigen::Vector3f p(static_cast<float>(rng.uniform(0.0, kBlock)),
                        static_cast<float>(rng.uniform(0.0, kBlock)), 0.0f);
      for (int a = 0; a < 3; ++a) p(a) += jitter(rng, floor->sigma_geom);
      scene.cloud.coords.row(w) = p;
      scene.cloud.colors.row(w) = sample_color(*floor, brightness, rng);
      scene.cloud.labels(w) = floor->id;
      ++w;
    }
    scene.instances.push_back(fi);
  }

  if (w != m) throw std::logic_error("generate_scene: point budget mismatch");
  scene.cloud.validate();
  return scene;
}

const ClassShape& Dataset::shape_of(int class_id) const {
  for (const ClassShape& s : vocab)
    if (s.id == class_id) return s;
  throw std::invalid_argument("Dataset: unknown class id");
}

std::vector<int> Dataset::class_ids() const {
  std::vector<int> ids;
  ids.reserve(vocab.size());
  for (const ClassShape& s : vocab) ids.push_back(s.id);
  return ids;
}

std::vector<Index> Dataset::clouds_with(int class_id, Index min_fg, int without) const {
  std::vector<Index> out;
  for (Index c = 0; c < static_cast<Index>(clouds.size()); ++c) {
    const Eigen::VectorXi& labels = clouds[static_cast<size_t>(c)].labels;
    Index hits = 0;
    Index excluded = 0;
    for (Index i = 0; i < labels.size(); ++i) {
      if (labels(i) == class_id) ++hits;
      if (without >= 0 && labels(i) == without) ++excluded;
    }
    if (hits >= min_fg && excluded == 0) out.push_back(c);
  }
  return out;
}

Dataset generate_dataset(Index n_scenes, Index m, std::uint64_t seed) {
  if (n_scenes <= 0) throw std::invalid_argument("generate_dataset: need scenes");
  Dataset data;
  data.vocab = default_vocabulary();
  data.split = default_split();
  data.split.validate();
  data.seed = seed;
  data.points_per_cloud = m;

  std::vector<int> object_ids;
  for (const ClassShape& s : data.vocab)
    if (s.kind != ClassShape::Kind::plane) object_ids.push_back(s.id);

  data.clouds.reserve(static_cast<size_t>(n_scenes));
  for (Index i = 0; i < n_scenes; ++i) {
    // Crowded draws can fail placement; retry the scene under a fresh
    // derived seed so the dataset stays a pure function of (seed, index).
    for (int attempt = 0;; ++attempt) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)),
                       static_cast<std::uint64_t>(attempt)));
      const Index n_floor = std::max<Index>(1, static_cast<Index>(std::lround(kFloorShare * m)));
      const Index cap = std::max<Index>(1, (m - n_floor) / 24);
      const int n_obj = std::min<int>(rng.uniform_int(2, 4), static_cast<int>(cap));

      std::vector<int> pool = object_ids;
      std::vector<int> chosen;
      for (int q = 0; q < n_obj; ++q) {
        const int j = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
        chosen.push_back(pool[static_cast<size_t>(j)]);
        pool[static_cast<size_t>(j)] = pool.back();
        pool.pop_back();
      }
      try {
        data.clouds.push_back(generate_scene(data.vocab, chosen, m, rng).cloud);
        break;
      } catch (const std::runtime_error&) {
        if (attempt >= 20) throw;
      }
    }
  }
  return data;
}

namespace {

/// Draws the true classes of the noisy slots, resampling until no single
/// noisy class ties or beats the clean count.
std::vector<int> draw_noisy_classes(const std::vector<int>& pool, int n_noisy, int n_clean,
                                    Rng& rng) {
  if (pool.empty()) throw std::runtime_error("sample_episode: empty noise pool");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int> classes;
    for (int i = 0; i < n_noisy; ++i)
      classes.push_back(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    bool ok = true;
    for (int c : classes) {
      const int cnt = static_cast<int>(std::count(classes.begin(), classes.end(), c));
      if (cnt >= n_clean) ok = false;
    }
    if (ok) return classes;
  }
  throw std::runtime_error("sample_episode: clean-majority constraint unsatisfiable");
}

SupportShot make_shot(const Dataset& data, Index cloud_idx, int declared, int true_class) {
  SupportShot shot;
  shot.cloud = data.clouds[static_cast<size_t>(cloud_idx)];
  shot.mask = shot.cloud.labels.array() == true_class;
  shot.declared_class = declared;
  shot.true_class = true_class;
  return shot;
}

}  // namespace

Episode sample_episode(const Dataset& data, const EpisodeSpec& spec, Rng& rng) {
  spec.noise.validate();
  if (spec.n_way < 1 || spec.k_shot < 1)
    throw std::invalid_argument("sample_episode: bad N/K");
  if (static_cast<int>(spec.way_pool.size()) < spec.n_way)
    throw std::invalid_argument("sample_episode: way pool too small");
  if (spec.noise.kind == NoiseKind::in_episode && spec.n_way < 2)
    throw std::invalid_argument("sample_episode: in-episode noise needs N >= 2");

  // Separate streams for the episode structure and for the noise draws, so
  // evaluations at different noise settings score the same underlying
  // episodes (paired comparisons across noise levels).
  Rng structure_rng(mix_seed(rng.bits(), 0x7374));
  Rng noise_rng(mix_seed(rng.bits(), 0x6e73));

  Episode ep;
  ep.n_way = spec.n_way;
  ep.k_shot = spec.k_shot;
  ep.noise = spec.noise;

  std::vector<int> pool = spec.way_pool;
  for (int n = 0; n < spec.n_way; ++n) {
    const int j = structure_rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    ep.way_classes.push_back(pool[static_cast<size_t>(j)]);
    pool[static_cast<size_t>(j)] = pool.back();
    pool.pop_back();
  }

  std::vector<Index> used;
  ep.support.resize(static_cast<size_t>(spec.n_way));
  for (int n = 0; n < spec.n_way; ++n) {
    const int cls = ep.way_classes[static_cast<size_t>(n)];
    std::vector<Index> candidates = data.clouds_with(cls, spec.min_fg);
    remove_used(candidates, used);
    const std::vector<Index> clean_clouds =
        pick_distinct(candidates, static_cast<size_t>(spec.k_shot), structure_rng);
    for (Index c : clean_clouds) used.push_back(c);
    for (Index c : clean_clouds)
      ep.support[static_cast<size_t>(n)].push_back(make_shot(data, c, cls, cls));
  }

  for (int n = 0; n < spec.n_way; ++n) {
    const int cls = ep.way_classes[static_cast<size_t>(n)];
    for (int q = 0; q < spec.queries_per_way; ++q) {
      std::vector<Index> candidates = data.clouds_with(cls, spec.min_fg);
      remove_used(candidates, used);
      const std::vector<Index> chosen = pick_distinct(candidates, 1, structure_rng);
      used.push_back(chosen[0]);
      const PointCloud& cloud = data.clouds[static_cast<size_t>(chosen[0])];
      Eigen::VectorXi labels = Eigen::VectorXi::Zero(cloud.size());
      for (Index i = 0; i < cloud.size(); ++i)
        for (int j = 0; j < spec.n_way; ++j)
          if (cloud.labels(i) == ep.way_classes[static_cast<size_t>(j)]) labels(i) = j + 1;
      ep.queries.push_back(cloud);
      ep.query_labels.push_back(std::move(labels));
    }
  }

  const int n_noisy = ep.noise.noisy_count(spec.k_shot);
  if (n_noisy > 0) {
    for (int n = 0; n < spec.n_way; ++n) {
      const int cls = ep.way_classes[static_cast<size_t>(n)];
      std::vector<int> noise_pool;
      if (ep.noise.kind == NoiseKind::in_episode) {
        for (int other : ep.way_classes)
          if (other != cls) noise_pool.push_back(other);
      } else {
        // Out-episode noise draws from outside all N episode classes.
        for (int other : spec.out_pool)
          if (std::find(ep.way_classes.begin(), ep.way_classes.end(), other) ==
              ep.way_classes.end())
            noise_pool.push_back(other);
      }
      const std::vector<int> noisy_classes =
          draw_noisy_classes(noise_pool, n_noisy, spec.k_shot - n_noisy, noise_rng);

      std::vector<int> slots(static_cast<size_t>(spec.k_shot));
      std::iota(slots.begin(), slots.end(), 0);
      std::vector<int> noisy_slots;
      for (int i = 0; i < n_noisy; ++i) {
        const int j = noise_rng.uniform_int(0, static_cast<int>(slots.size()) - 1);
        noisy_slots.push_back(slots[static_cast<size_t>(j)]);
        slots[static_cast<size_t>(j)] = slots.back();
        slots.pop_back();
      }

      for (int i = 0; i < n_noisy; ++i) {
        const int nc = noisy_classes[static_cast<size_t>(i)];
        std::vector<Index> noisy_candidates = data.clouds_with(nc, spec.min_fg, cls);
        remove_used(noisy_candidates, used);
        const std::vector<Index> chosen = pick_distinct(noisy_candidates, 1, noise_rng);
        used.push_back(chosen[0]);
        ep.support[static_cast<size_t>(n)]
                  [static_cast<size_t>(noisy_slots[static_cast<size_t>(i)])] =
            make_shot(data, chosen[0], cls, nc);
      }
    }
  }

  ep.validate();
  return ep;
}

double inject_training_noise(const Dataset& data, Episode& episode, Index min_fg, Rng& rng) {
  return inject_training_noise(data, episode, min_fg, rng, {0.0, 0.2, 0.4});
}

double inject_training_noise(const Dataset& data, Episode& episode, Index min_fg, Rng& rng,
                             const std::vector<double>& ratio_mix) {
  if (ratio_mix.empty()) throw std::invalid_argument("inject_training_noise: empty ratio mix");
  const double ratio = ratio_mix[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(ratio_mix.size()) - 1))];
  if (ratio == 0.0) return ratio;

  const int n_noisy = static_cast<int>(std::lround(ratio * episode.k_shot));
  for (int n = 0; n < episode.n_way; ++n) {
    const int cls = episode.way_classes[static_cast<size_t>(n)];
    std::vector<int> noise_pool;
    for (int c : data.split.base_classes)
      if (c != cls) noise_pool.push_back(c);
    const std::vector<int> noisy_classes =
        draw_noisy_classes(noise_pool, n_noisy, episode.k_shot - n_noisy, rng);

    std::vector<int> slots(static_cast<size_t>(episode.k_shot));
    std::iota(slots.begin(), slots.end(), 0);
    std::vector<int> noisy_slots;
    for (int i = 0; i < n_noisy; ++i) {
      const int j = rng.uniform_int(0, static_cast<int>(slots.size()) - 1);
      noisy_slots.push_back(slots[static_cast<size_t>(j)]);
      slots[static_cast<size_t>(j)] = slots.back();
      slots.pop_back();
    }

    for (int i = 0; i < n_noisy; ++i) {
      const int nc = noisy_classes[static_cast<size_t>(i)];
      std::vector<Index> candidates = data.clouds_with(nc, min_fg, cls);
      const std::vector<Index> chosen = pick_distinct(candidates, 1, rng);
      episode.support[static_cast<size_t>(n)][static_cast<size_t>(noisy_slots[static_cast<size_t>(i)])] =
          make_shot(data, chosen[0], cls, nc);
    }
  }
  episode.validate();
  return ratio;
}

}  // namespace rfseg
