#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "rfseg/mdns.hpp"
#include "rfseg/network.hpp"
#include "rfseg/synthdata.hpp"
#include "rfseg/types.hpp"

#include <json.hpp>

namespace rfseg {

/// Errors that should surface as exit code 2 (bad configuration or input
/// files) rather than a generic failure.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Errors from numerical breakdown (exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- point cloud + dataset directory -------------------------------------
// One cloud = a little-endian record stream of x,y,z,r,g,b (f32) and the
// label (u32) per point. A dataset directory holds per-cloud .bin files
// plus manifest.json (count, class vocabulary, split, generator seed).

void save_cloud(const std::filesystem::path& file, const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& file);

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

// --- checkpoints ----------------------------------------------------------
// u64 header length, JSON header (dims, layer shapes, step, seed), then the
// tensors as little-endian f32 row-major blocks in visit_params order.

struct CheckpointMeta {
  std::uint64_t seed = 0;
  long step = 0;
};

void save_checkpoint(const std::filesystem::path& file, const EmbeddingNet<float>& net,
                     const CheckpointMeta& meta);
EmbeddingNet<float> load_checkpoint(const std::filesystem::path& file,
                                    CheckpointMeta* meta = nullptr);

// --- filter-demo ----------------------------------------------------------
// The binary file reuses the checkpoint tensor-block layout: per shot one
// n x 3 coordinate block then one n x d feature block. The JSON descriptor
// names the shot sizes, feature width, scales and gammas.

struct FilterDemoInput {
  std::vector<ShotForeground<float>> shots;
  MdnsConfig config;
};

FilterDemoInput read_filter_demo(const std::filesystem::path& descriptor,
                                 const std::filesystem::path& binary);
void write_filter_demo(const std::filesystem::path& descriptor,
                       const std::filesystem::path& binary, const FilterDemoInput& input);
nlohmann::json filter_result_to_json(const FilterResult& result);

// --- key = value config files ----------------------------------------------

std::map<std::string, std::string> read_config_file(const std::filesystem::path& file);

}  // namespace rfseg
