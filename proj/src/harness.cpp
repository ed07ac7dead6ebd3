#include "rfseg/harness.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rfseg/io.hpp"

namespace rfseg {

namespace {

using nlohmann::json;

int parse_int(const std::string& v) {
  size_t pos = 0;
  const int x = std::stoi(v, &pos);
  if (pos != v.size()) throw ConfigError("bad integer: " + v);
  return x;
}

double parse_double(const std::string& v) {
  size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw ConfigError("bad number: " + v);
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("bad boolean: " + v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

ScaleSpec parse_scale(const std::string& v) {
  ScaleSpec s;
  if (std::sscanf(v.c_str(), "%dx%dx%d", &s.nx, &s.ny, &s.nz) != 3)
    throw ConfigError("bad scale (want e.g. 2x2x1): " + v);
  return s;
}

/// Base-class label map for the classifier head: background 0, then the
/// base classes in split order.
Eigen::VectorXi pretrain_labels(const PointCloud& cloud, const DatasetSplit& split) {
  Eigen::VectorXi y = Eigen::VectorXi::Zero(cloud.size());
  for (Index i = 0; i < cloud.size(); ++i)
    for (size_t b = 0; b < split.base_classes.size(); ++b)
      if (cloud.labels(i) == split.base_classes[b]) y(i) = static_cast<int>(b) + 1;
  return y;
}

Index holdout_begin(const Dataset& data, const ExperimentConfig& cfg) {
  const Index n = static_cast<Index>(data.clouds.size());
  Index begin = n - static_cast<Index>(std::floor(cfg.holdout_fraction * n));
  if (begin < 1) begin = 1;
  return begin;
}

EpisodeSpec episode_spec(const Dataset& data, const ExperimentConfig& cfg, bool training) {
  EpisodeSpec spec;
  spec.n_way = cfg.n_way;
  spec.k_shot = cfg.k_shot;
  spec.queries_per_way = cfg.queries_per_way;
  spec.min_fg = cfg.min_fg;
  spec.noise = training ? NoiseConfig{} : cfg.noise;
  if (training) {
    for (int c : data.split.base_classes)
      if (data.shape_of(c).kind != ClassShape::Kind::plane) spec.way_pool.push_back(c);
  } else {
    spec.way_pool = data.split.novel_classes;
    spec.out_pool = data.split.novel_classes;
  }
  return spec;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (scenes < 4 || points < 16) throw ConfigError("config: dataset too small");
  if (n_way < 1 || k_shot < 1 || queries_per_way < 1) throw ConfigError("config: bad episode shape");
  if (pretrain_epochs < 0 || train_episodes < 0 || eval_episodes < 1)
    throw ConfigError("config: bad schedule");
  if (holdout_fraction < 0.0 || holdout_fraction > 0.5)
    throw ConfigError("config: holdout fraction outside [0, 0.5]");
  noise.validate();
  loss.validate();
  propagation.validate();
  mdns.validate();
}

json ExperimentConfig::to_json() const {
  json scales = json::array();
  for (const ScaleSpec& s : mdns.scales) scales.push_back({s.nx, s.ny, s.nz});
  return {
      {"data", {{"scenes", scenes}, {"points", points}, {"min_fg", min_fg}}},
      {"episode",
       {{"n_way", n_way},
        {"k_shot", k_shot},
        {"queries_per_way", queries_per_way},
        {"noise_kind", to_string(noise.kind)},
        {"noise_ratio", noise.ratio}}},
      {"net",
       {{"h1", dims.h1}, {"h2", dims.h2}, {"feat", dims.feat}, {"proj", dims.proj}}},
      {"loss", {{"tau", loss.tau}, {"lambda", loss.lambda}, {"components", loss.components}}},
      {"pretrain", {{"epochs", pretrain_epochs}, {"lr", pretrain_lr}}},
      {"train",
       {{"episodes", train_episodes},
        {"lr_backbone", train_lr_backbone},
        {"lr_projection", train_lr_projection}}},
      {"inference",
       {{"alpha", propagation.alpha},
        {"k_nn", propagation.k_nn},
        {"n_proto", propagation.n_proto},
        {"use_mdns", use_mdns},
        {"head", head == InferenceHead::label_propagation ? "lp" : "protonet"},
        {"feature_space", feature_space == FeatureSpace::projection ? "projection" : "backbone"},
        {"scales", scales},
        {"gammas", mdns.gammas},
        {"episodes", eval_episodes}}},
      {"seed", seed},
  };
}

ExperimentConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "data.scenes") cfg.scenes = parse_int(value);
    else if (key == "data.points") cfg.points = parse_int(value);
    else if (key == "data.min_fg") cfg.min_fg = parse_int(value);
    else if (key == "episode.n_way") cfg.n_way = parse_int(value);
    else if (key == "episode.k_shot") cfg.k_shot = parse_int(value);
    else if (key == "episode.queries_per_way") cfg.queries_per_way = parse_int(value);
    else if (key == "noise.kind") cfg.noise.kind = noise_kind_from_string(value);
    else if (key == "noise.ratio") cfg.noise.ratio = parse_double(value);
    else if (key == "net.h1") cfg.dims.h1 = parse_int(value);
    else if (key == "net.h2") cfg.dims.h2 = parse_int(value);
    else if (key == "net.feat") cfg.dims.feat = parse_int(value);
    else if (key == "net.proj") cfg.dims.proj = parse_int(value);
    else if (key == "loss.tau") cfg.loss.tau = static_cast<float>(parse_double(value));
    else if (key == "loss.lambda") cfg.loss.lambda = static_cast<float>(parse_double(value));
    else if (key == "loss.components") cfg.loss.components = parse_int(value);
    else if (key == "pretrain.epochs") cfg.pretrain_epochs = parse_int(value);
    else if (key == "pretrain.lr") cfg.pretrain_lr = static_cast<float>(parse_double(value));
    else if (key == "pretrain.holdout") cfg.holdout_fraction = parse_double(value);
    else if (key == "train.episodes") cfg.train_episodes = parse_int(value);
    else if (key == "train.lr_backbone") cfg.train_lr_backbone = static_cast<float>(parse_double(value));
    else if (key == "train.lr_projection") cfg.train_lr_projection = static_cast<float>(parse_double(value));
    else if (key == "prop.alpha") cfg.propagation.alpha = parse_double(value);
    else if (key == "prop.k_nn") cfg.propagation.k_nn = parse_int(value);
    else if (key == "prop.n_proto") cfg.propagation.n_proto = parse_int(value);
    else if (key == "mdns.enabled") cfg.use_mdns = parse_bool(value);
    else if (key == "mdns.scales") {
      cfg.mdns.scales.clear();
      for (const std::string& s : split_list(value)) cfg.mdns.scales.push_back(parse_scale(s));
    } else if (key == "mdns.gammas") {
      cfg.mdns.gammas.clear();
      for (const std::string& s : split_list(value)) cfg.mdns.gammas.push_back(parse_double(s));
    }
    else if (key == "eval.episodes") cfg.eval_episodes = parse_int(value);
    else if (key == "eval.head") cfg.head = head_from_string(value);
    else if (key == "feature_space") {
      if (value == "projection") cfg.feature_space = FeatureSpace::projection;
      else if (value == "backbone") cfg.feature_space = FeatureSpace::backbone;
      else throw ConfigError("feature_space must be projection or backbone");
    }
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    else throw ConfigError("unknown config key: " + key);
  }
  cfg.validate();
  return cfg;
}

void pretrain(EmbeddingNet<float>& net, const Dataset& data, const ExperimentConfig& cfg,
              const LogFn& log, const std::optional<std::filesystem::path>& diverged_path) {
  if (net.dims.classes != static_cast<int>(data.split.base_classes.size()) + 1)
    throw ConfigError("pretrain: classifier width must be base classes + 1");
  const Index train_end = holdout_begin(data, cfg);

  AdamState<float> state = AdamState<float>::like(net);
  EmbeddingNet<float> last_finite = net;

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    Rng order_rng(mix_seed(cfg.seed, 0x70726574ULL + static_cast<std::uint64_t>(epoch)));
    std::vector<Index> order(static_cast<size_t>(train_end));
    std::iota(order.begin(), order.end(), Index(0));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_loss = 0.0;
    for (Index idx : order) {
      const PointCloud& cloud = data.clouds[static_cast<size_t>(idx)];
      ForwardCache<float> cache = forward(net, cloud, /*want_logits=*/true);
      MatrixX<float> d_logits;
      const float loss =
          cross_entropy<float>(cache.logits, pretrain_labels(cloud, data.split), &d_logits);
      if (!std::isfinite(loss)) {
        if (diverged_path) save_checkpoint(*diverged_path, last_finite, {cfg.seed, state.step});
        throw NumericError("pretrain: loss diverged");
      }
      EmbeddingNet<float> grads = EmbeddingNet<float>::zeros(net.dims);
      const MatrixX<float> empty;
      backward(net, cache, empty, empty, d_logits, grads);
      adam_step(net, grads, state, cfg.pretrain_lr);
      if (!net.all_finite()) {
        if (diverged_path) save_checkpoint(*diverged_path, last_finite, {cfg.seed, state.step});
        throw NumericError("pretrain: parameters diverged");
      }
      last_finite = net;
      epoch_loss += loss;
    }
    if (log && (epoch % 10 == 9 || epoch + 1 == cfg.pretrain_epochs)) {
      std::ostringstream ss;
      ss << "pretrain epoch " << epoch + 1 << "/" << cfg.pretrain_epochs << " loss "
         << epoch_loss / std::max<Index>(train_end, 1);
      log(ss.str());
    }
  }
}

double pretrain_accuracy(const EmbeddingNet<float>& net, const Dataset& data,
                         const ExperimentConfig& cfg) {
  const Index begin = holdout_begin(data, cfg);
  long hits = 0, total = 0;
  for (Index c = begin; c < static_cast<Index>(data.clouds.size()); ++c) {
    const PointCloud& cloud = data.clouds[static_cast<size_t>(c)];
    const ForwardCache<float> cache = forward(net, cloud, /*want_logits=*/true);
    const Eigen::VectorXi truth = pretrain_labels(cloud, data.split);
    const Eigen::VectorXi pred = predict_labels<float>(cache.logits);
    for (Index i = 0; i < cloud.size(); ++i) {
      hits += pred(i) == truth(i);
      ++total;
    }
  }
  if (total == 0) throw ConfigError("pretrain_accuracy: empty holdout");
  return static_cast<double>(hits) / static_cast<double>(total);
}

void episodic_train(EmbeddingNet<float>& net, const Dataset& data, const ExperimentConfig& cfg,
                    const LogFn& log) {
  episodic_train_with_mix(net, data, cfg, {0.0, 0.2, 0.4}, log);
}

void episodic_train_with_mix(EmbeddingNet<float>& net, const Dataset& data,
                             const ExperimentConfig& cfg, const std::vector<double>& ratio_mix,
                             const LogFn& log, std::vector<float>* loss_history) {
  const EpisodeSpec spec = episode_spec(data, cfg, /*training=*/true);
  AdamState<float> state = AdamState<float>::like(net);
  const std::array<float, 3> lr = {cfg.train_lr_backbone, cfg.train_lr_projection, 0.0f};

  double window = 0.0;
  for (int it = 0; it < cfg.train_episodes; ++it) {
    Rng rng(mix_seed(cfg.seed, 0x65706973ULL + static_cast<std::uint64_t>(it)));
    Episode episode = sample_episode(data, spec, rng);
    inject_training_noise(data, episode, cfg.min_fg, rng, ratio_mix);

    EmbeddingNet<float> grads = EmbeddingNet<float>::zeros(net.dims);
    EpisodeLossResult<float> loss;
    try {
      loss = episode_loss<float>(net, episode, cfg.loss, cfg.propagation.n_proto, &grads,
                                 nullptr, nullptr, cfg.feature_space);
    } catch (const std::runtime_error& e) {
      throw NumericError(e.what());
    }
    adam_step(net, grads, state, lr);
    if (loss_history) loss_history->push_back(loss.total);
    window += loss.total;
    if (log && (it % 100 == 99)) {
      std::ostringstream ss;
      ss << "episode " << it + 1 << "/" << cfg.train_episodes << " loss "
         << window / 100.0;
      log(ss.str());
      window = 0.0;
    }
  }
  if (!net.all_finite()) throw NumericError("episodic_train: parameters diverged");
}

MetricsReport meta_test(const EmbeddingNet<float>& net, const Dataset& data,
                        const ExperimentConfig& cfg, const LogFn& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const EpisodeSpec spec = episode_spec(data, cfg, /*training=*/false);

  InferenceConfig inf;
  inf.propagation = cfg.propagation;
  inf.mdns = cfg.mdns;
  inf.use_mdns = cfg.use_mdns;
  inf.head = cfg.head;
  inf.space = cfg.feature_space;

  MetricsReport report;
  report.config_echo = cfg.to_json();
  std::vector<int> eval_classes;
  for (int n = 1; n <= cfg.n_way; ++n) eval_classes.push_back(n);

  double clean_before = 0.0, clean_after = 0.0;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x6576616cULL), static_cast<std::uint64_t>(e)));
    const Episode episode = sample_episode(data, spec, rng);
    const EpisodeEval<float> eval = evaluate_episode(net, episode, inf);

    report.miou_per_episode.push_back(
        compute_miou(eval.predictions, episode.query_labels, eval_classes));
    clean_before += episode_clean_fraction(episode);
    clean_after += episode_clean_fraction(episode, &eval.retained);
    for (double p : eval.prototype_purity) report.purity.add(p);
    if (log && (e % 20 == 19)) log("episode " + std::to_string(e + 1) + " done");
  }

  report.episode_count = cfg.eval_episodes;
  double acc = 0.0;
  for (double v : report.miou_per_episode) acc += v;
  report.miou_mean = acc / cfg.eval_episodes;
  report.clean_ratio_before = clean_before / cfg.eval_episodes;
  report.clean_ratio_after = clean_after / cfg.eval_episodes;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.validate();
  return report;
}

}  // namespace rfseg
