#include "rfseg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rfseg {

namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24;
}

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

std::uint64_t get_u64(const char* p) {
  return static_cast<std::uint64_t>(get_u32(p)) |
         static_cast<std::uint64_t>(get_u32(p + 4)) << 32;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed: " + file.string());
}

const char* kind_name(ClassShape::Kind k) {
  switch (k) {
    case ClassShape::Kind::plane: return "plane";
    case ClassShape::Kind::box: return "box";
    case ClassShape::Kind::sphere: return "sphere";
    case ClassShape::Kind::cylinder: return "cylinder";
  }
  return "?";
}

ClassShape::Kind kind_from(const std::string& s) {
  if (s == "plane") return ClassShape::Kind::plane;
  if (s == "box") return ClassShape::Kind::box;
  if (s == "sphere") return ClassShape::Kind::sphere;
  if (s == "cylinder") return ClassShape::Kind::cylinder;
  throw ConfigError("unknown primitive kind: " + s);
}

void append_tensor(std::string& out, const MatrixX<float>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_f32(out, m(i, j));
}

void append_tensor(std::string& out, const VectorX<float>& v) {
  for (Index i = 0; i < v.size(); ++i) put_f32(out, v(i));
}

}  // namespace

void save_cloud(const std::filesystem::path& file, const PointCloud& cloud) {
  std::string bytes;
  bytes.reserve(static_cast<size_t>(cloud.size()) * 28);
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) put_f32(bytes, cloud.coords(i, a));
    for (int a = 0; a < 3; ++a) put_f32(bytes, cloud.colors(i, a));
    put_u32(bytes, static_cast<std::uint32_t>(cloud.labels(i)));
  }
  write_file(file, bytes);
}

PointCloud load_cloud(const std::filesystem::path& file) {
  const std::string bytes = read_file(file);
  if (bytes.size() % 28 != 0) throw ConfigError("corrupt cloud file: " + file.string());
  const Index m = static_cast<Index>(bytes.size() / 28);
  PointCloud cloud;
  cloud.coords.resize(m, 3);
  cloud.colors.resize(m, 3);
  cloud.labels.resize(m);
  const char* p = bytes.data();
  for (Index i = 0; i < m; ++i) {
    for (int a = 0; a < 3; ++a, p += 4) cloud.coords(i, a) = get_f32(p);
    for (int a = 0; a < 3; ++a, p += 4) cloud.colors(i, a) = get_f32(p);
    cloud.labels(i) = static_cast<int>(get_u32(p));
    p += 4;
  }
  return cloud;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  json classes = json::array();
  for (const ClassShape& s : data.vocab) {
    classes.push_back({{"id", s.id},
                       {"name", s.name},
                       {"kind", kind_name(s.kind)},
                       {"size_lo", s.size_lo},
                       {"size_hi", s.size_hi},
                       {"color", {s.color_mean(0), s.color_mean(1), s.color_mean(2)}},
                       {"color_spread", s.color_spread},
                       {"sigma_geom", s.sigma_geom}});
  }
  json files = json::array();
  for (size_t i = 0; i < data.clouds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "cloud_%05zu.bin", i);
    files.push_back(name);
    save_cloud(dir / name, data.clouds[i]);
  }
  const json manifest = {
      {"format", "rfseg-dataset"},
      {"version", 1},
      {"seed", data.seed},
      {"points_per_cloud", data.points_per_cloud},
      {"classes", classes},
      {"split", {{"base", data.split.base_classes}, {"novel", data.split.novel_classes}}},
      {"clouds", files},
  };
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "rfseg-dataset")
    throw ConfigError("not a dataset directory: " + dir.string());

  Dataset data;
  data.seed = manifest.at("seed").get<std::uint64_t>();
  data.points_per_cloud = manifest.at("points_per_cloud").get<Index>();
  for (const json& c : manifest.at("classes")) {
    ClassShape s;
    s.id = c.at("id").get<int>();
    s.name = c.at("name").get<std::string>();
    s.kind = kind_from(c.at("kind").get<std::string>());
    s.size_lo = c.at("size_lo").get<float>();
    s.size_hi = c.at("size_hi").get<float>();
    for (int a = 0; a < 3; ++a) s.color_mean(a) = c.at("color").at(a).get<float>();
    s.color_spread = c.at("color_spread").get<float>();
    s.sigma_geom = c.at("sigma_geom").get<float>();
    data.vocab.push_back(s);
  }
  data.split.base_classes = manifest.at("split").at("base").get<std::vector<int>>();
  data.split.novel_classes = manifest.at("split").at("novel").get<std::vector<int>>();
  data.split.validate();
  for (const json& f : manifest.at("clouds")) {
    PointCloud cloud = load_cloud(dir / f.get<std::string>());
    cloud.validate();
    for (Index i = 0; i < cloud.size(); ++i) {
      bool known = false;
      for (const ClassShape& s : data.vocab) known = known || s.id == cloud.labels(i);
      if (!known) throw ConfigError("cloud label outside vocabulary");
    }
    data.clouds.push_back(std::move(cloud));
  }
  return data;
}

void save_checkpoint(const std::filesystem::path& file, const EmbeddingNet<float>& net,
                     const CheckpointMeta& meta) {
  json layers = json::array();
  std::string blob;
  visit_params(const_cast<EmbeddingNet<float>&>(net), [&](const char* name, ParamGroup,
                                                          const auto& tensor) {
    layers.push_back({{"name", name}, {"rows", tensor.rows()}, {"cols", tensor.cols()}});
    append_tensor(blob, tensor);
  });
  const json header = {
      {"format", "rfseg-checkpoint"},
      {"version", 1},
      {"seed", meta.seed},
      {"step", meta.step},
      {"dims",
       {{"in", net.dims.in},
        {"h1", net.dims.h1},
        {"h2", net.dims.h2},
        {"feat", net.dims.feat},
        {"proj", net.dims.proj},
        {"classes", net.dims.classes}}},
      {"layers", layers},
  };
  const std::string head = header.dump();
  std::string bytes;
  put_u64(bytes, head.size());
  bytes += head;
  bytes += blob;
  write_file(file, bytes);
}

EmbeddingNet<float> load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta) {
  const std::string bytes = read_file(file);
  if (bytes.size() < 8) throw ConfigError("corrupt checkpoint: " + file.string());
  const std::uint64_t head_len = get_u64(bytes.data());
  if (bytes.size() < 8 + head_len) throw ConfigError("corrupt checkpoint: " + file.string());
  json header;
  try {
    header = json::parse(bytes.substr(8, head_len));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "rfseg-checkpoint")
    throw ConfigError("not a checkpoint: " + file.string());

  NetDims dims;
  dims.in = header.at("dims").at("in").get<int>();
  dims.h1 = header.at("dims").at("h1").get<int>();
  dims.h2 = header.at("dims").at("h2").get<int>();
  dims.feat = header.at("dims").at("feat").get<int>();
  dims.proj = header.at("dims").at("proj").get<int>();
  dims.classes = header.at("dims").at("classes").get<int>();
  EmbeddingNet<float> net = EmbeddingNet<float>::zeros(dims);

  const char* p = bytes.data() + 8 + head_len;
  const char* end = bytes.data() + bytes.size();
  size_t layer_idx = 0;
  const json& layers = header.at("layers");
  visit_params(net, [&](const char* name, ParamGroup, auto& tensor) {
    const json& l = layers.at(layer_idx++);
    if (l.at("name") != name || l.at("rows") != tensor.rows() || l.at("cols") != tensor.cols())
      throw ConfigError("checkpoint layer mismatch at " + std::string(name));
    for (Index i = 0; i < tensor.rows(); ++i)
      for (Index j = 0; j < tensor.cols(); ++j) {
        if (p + 4 > end) throw ConfigError("checkpoint truncated");
        tensor(i, j) = get_f32(p);
        p += 4;
      }
  });
  if (meta) {
    meta->seed = header.at("seed").get<std::uint64_t>();
    meta->step = header.at("step").get<long>();
  }
  return net;
}

FilterDemoInput read_filter_demo(const std::filesystem::path& descriptor,
                                 const std::filesystem::path& binary) {
  json desc;
  try {
    desc = json::parse(read_file(descriptor));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad descriptor: ") + e.what());
  }
  FilterDemoInput input;
  const Index d = desc.at("feature_dim").get<Index>();
  input.config.scales.clear();
  input.config.gammas.clear();
  for (const json& s : desc.at("scales"))
    input.config.scales.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
  input.config.gammas = desc.at("gammas").get<std::vector<double>>();
  input.config.validate();

  const std::string bytes = read_file(binary);
  const char* p = bytes.data();
  const char* end = bytes.data() + bytes.size();
  for (const json& s : desc.at("shots")) {
    const Index n = s.at("points").get<Index>();
    ShotForeground<float> shot;
    shot.coords.resize(n, 3);
    shot.features.resize(n, d);
    const size_t need = static_cast<size_t>(n) * static_cast<size_t>(3 + d) * 4;
    if (p + need > end) throw ConfigError("feature file truncated");
    for (Index i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a, p += 4) shot.coords(i, a) = get_f32(p);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j, p += 4) shot.features(i, j) = get_f32(p);
    input.shots.push_back(std::move(shot));
  }
  if (p != end) throw ConfigError("feature file has trailing bytes");
  return input;
}

void write_filter_demo(const std::filesystem::path& descriptor,
                       const std::filesystem::path& binary, const FilterDemoInput& input) {
  json shots = json::array();
  std::string blob;
  const Index d = input.shots.empty() ? 0 : input.shots[0].features.cols();
  for (const auto& s : input.shots) {
    shots.push_back({{"points", s.coords.rows()}});
    for (Index i = 0; i < s.coords.rows(); ++i)
      for (int a = 0; a < 3; ++a) put_f32(blob, s.coords(i, a));
    append_tensor(blob, s.features);
  }
  json scales = json::array();
  for (const ScaleSpec& s : input.config.scales) scales.push_back({s.nx, s.ny, s.nz});
  const json desc = {{"feature_dim", d},
                     {"shots", shots},
                     {"scales", scales},
                     {"gammas", input.config.gammas}};
  write_file(descriptor, desc.dump(2) + "\n");
  write_file(binary, blob);
}

nlohmann::json filter_result_to_json(const FilterResult& result) {
  return {{"cell_indicators", result.cell_indicators},
          {"scale_indicators", result.scale_indicators},
          {"final_indicators", result.final_indicators},
          {"retained", result.retained},
          {"fallback_used", result.fallback_used}};
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& file) {
  const std::string text = read_file(file);
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

}  // namespace rfseg
