#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rfseg/harness.hpp"
#include "rfseg/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_file;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "key = value config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
}

rfseg::ExperimentConfig load_experiment(const CommonArgs& args) {
  std::map<std::string, std::string> kv;
  if (!args.config_file.empty()) kv = rfseg::read_config_file(args.config_file);
  rfseg::ExperimentConfig cfg = rfseg::config_from_kv(kv);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw rfseg::ConfigError("cannot write " + file.string());
  out << text;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void write_report(const fs::path& dir, const std::string& stem, const rfseg::MetricsReport& report) {
  fs::create_directories(dir);
  write_text(dir / (stem + ".json"), report.to_json().dump(2) + "\n");
  write_text(dir / (stem + ".csv"), report.to_csv());
  std::cout << report.to_table();
}

int run_gen_data(const CommonArgs& args) {
  const rfseg::ExperimentConfig cfg = load_experiment(args);
  rfseg::Dataset data = rfseg::generate_dataset(cfg.scenes, cfg.points, cfg.seed);
  rfseg::save_dataset(args.out_dir, data);
  json split = {{"base", data.split.base_classes},
                {"novel", data.split.novel_classes},
                {"seed", data.seed},
                {"scenes", data.clouds.size()},
                {"points_per_cloud", data.points_per_cloud}};
  write_text(fs::path(args.out_dir) / "split.json", split.dump(2) + "\n");
  std::cout << "wrote " << data.clouds.size() << " clouds to " << args.out_dir << '\n';
  return 0;
}

int run_pretrain(const CommonArgs& args, const std::string& data_dir) {
  const rfseg::ExperimentConfig cfg = load_experiment(args);
  const rfseg::Dataset data = rfseg::load_dataset(data_dir);
  rfseg::NetDims dims = cfg.dims;
  dims.classes = static_cast<int>(data.split.base_classes.size()) + 1;
  rfseg::EmbeddingNet<float> net = rfseg::EmbeddingNet<float>::seeded(dims, cfg.seed);
  fs::create_directories(args.out_dir);
  rfseg::pretrain(net, data, cfg, log_line, fs::path(args.out_dir) / "diverged.ckpt");
  const double acc = rfseg::pretrain_accuracy(net, data, cfg);
  rfseg::save_checkpoint(fs::path(args.out_dir) / "pretrained.ckpt", net, {cfg.seed, 0});
  std::cout << "holdout accuracy " << acc << '\n';
  return 0;
}

int run_train(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt) {
  const rfseg::ExperimentConfig cfg = load_experiment(args);
  const rfseg::Dataset data = rfseg::load_dataset(data_dir);
  rfseg::EmbeddingNet<float> net = rfseg::load_checkpoint(ckpt);
  rfseg::episodic_train(net, data, cfg, log_line);
  fs::create_directories(args.out_dir);
  rfseg::save_checkpoint(fs::path(args.out_dir) / "trained.ckpt", net,
                         {cfg.seed, cfg.train_episodes});
  std::cout << "wrote " << (fs::path(args.out_dir) / "trained.ckpt").string() << '\n';
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt) {
  const rfseg::ExperimentConfig cfg = load_experiment(args);
  const rfseg::Dataset data = rfseg::load_dataset(data_dir);
  const rfseg::EmbeddingNet<float> net = rfseg::load_checkpoint(ckpt);
  const rfseg::MetricsReport report = rfseg::meta_test(net, data, cfg, log_line);
  write_report(args.out_dir, "metrics", report);
  return 0;
}

int run_filter_demo(const CommonArgs& args, const std::string& desc, const std::string& bin) {
  const rfseg::FilterDemoInput input = rfseg::read_filter_demo(desc, bin);
  const rfseg::FilterResult result = rfseg::mdns_filter(input.shots, input.config);
  fs::create_directories(args.out_dir);
  const json out = rfseg::filter_result_to_json(result);
  write_text(fs::path(args.out_dir) / "filter_result.json", out.dump(2) + "\n");
  std::cout << out.dump(2) << '\n';
  return 0;
}

/// Hyperparameter sweeps mirroring the supplementary tables: component
/// counts, training-noise mixes, and MDNS scale sets.
int run_ablate(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt,
               const std::string& axis) {
  const rfseg::ExperimentConfig base_cfg = load_experiment(args);
  const rfseg::Dataset data = rfseg::load_dataset(data_dir);
  const rfseg::EmbeddingNet<float> pretrained = rfseg::load_checkpoint(ckpt);
  fs::create_directories(args.out_dir);

  json summary = json::array();
  std::ostringstream table;
  table << "variant,miou_mean,clean_before,clean_after\n";
  auto record = [&](const std::string& name, const rfseg::MetricsReport& report) {
    summary.push_back({{"variant", name},
                       {"miou_mean", report.miou_mean},
                       {"clean_ratio_before", report.clean_ratio_before},
                       {"clean_ratio_after", report.clean_ratio_after}});
    table << name << ',' << report.miou_mean << ',' << report.clean_ratio_before << ','
          << report.clean_ratio_after << '\n';
  };

  if (axis == "r") {
    for (int r : {1, 2, 4, 8}) {
      rfseg::ExperimentConfig cfg = base_cfg;
      cfg.loss.components = r;
      rfseg::EmbeddingNet<float> net = pretrained;
      rfseg::episodic_train(net, data, cfg, log_line);
      record("R=" + std::to_string(r), rfseg::meta_test(net, data, cfg, {}));
    }
  } else if (axis == "scales") {
    rfseg::EmbeddingNet<float> net = pretrained;
    rfseg::episodic_train(net, data, base_cfg, log_line);
    const std::vector<std::pair<std::string, rfseg::MdnsConfig>> variants = {
        {"1x1x1", {{{1, 1, 1}}, {3.0}}},
        {"2x2x1", {{{2, 2, 1}}, {1.0}}},
        {"1x2x2", {{{1, 2, 2}}, {1.0}}},
        {"2x1x2", {{{2, 1, 2}}, {1.0}}},
        {"3x3x1", {{{3, 3, 1}}, {1.0}}},
        {"1x1x1+2x2x1", {{{1, 1, 1}, {2, 2, 1}}, {3.0, 1.0}}},
        {"1x1x1+2x2x1+3x3x1", {{{1, 1, 1}, {2, 2, 1}, {3, 3, 1}}, {3.0, 1.0, 1.0}}},
    };
    for (const auto& [name, mdns] : variants) {
      rfseg::ExperimentConfig cfg = base_cfg;
      cfg.mdns = mdns;
      cfg.use_mdns = true;
      record(name, rfseg::meta_test(net, data, cfg, {}));
    }
  } else if (axis == "noise-mix") {
    // Training-noise mixes need their own episodic runs; the {0,0.2,0.4}
    // mix is the shipped default, the others bracket it.
    std::cout << "noise-mix ablation trains one model per mix; see README\n";
    const std::vector<std::pair<std::string, std::vector<double>>> mixes = {
        {"0.2+0.4", {0.2, 0.4}},
        {"0+0.2+0.4", {0.0, 0.2, 0.4}},
        {"0+0.2+0.4+0.6", {0.0, 0.2, 0.4, 0.6}},
    };
    for (const auto& [name, mix] : mixes) {
      rfseg::ExperimentConfig cfg = base_cfg;
      rfseg::EmbeddingNet<float> net = pretrained;
      rfseg::episodic_train_with_mix(net, data, cfg, mix, log_line);
      record(name, rfseg::meta_test(net, data, cfg, {}));
    }
  } else {
    throw rfseg::ConfigError("ablate: axis must be r, scales or noise-mix");
  }

  write_text(fs::path(args.out_dir) / ("ablate_" + axis + ".json"), summary.dump(2) + "\n");
  write_text(fs::path(args.out_dir) / ("ablate_" + axis + ".csv"), table.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust few-shot point cloud segmentation harness"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, ckpt, desc, bin, axis = "r";

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, args);

  CLI::App* pre = app.add_subcommand("pretrain", "pretrain the feature extractor");
  add_common(pre, args);
  pre->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "episodic fine-tuning");
  add_common(train, args);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--ckpt", ckpt, "pretrained checkpoint")->required();

  CLI::App* eval = app.add_subcommand("eval", "meta-testing");
  add_common(eval, args);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--ckpt", ckpt, "trained checkpoint")->required();

  CLI::App* demo = app.add_subcommand("filter-demo", "run MDNS on a feature file");
  add_common(demo, args);
  demo->add_option("--desc", desc, "JSON descriptor")->required();
  demo->add_option("--features", bin, "binary feature file")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "hyperparameter sweeps");
  add_common(ablate, args);
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--ckpt", ckpt, "pretrained checkpoint")->required();
  ablate->add_option("--axis", axis, "r | scales | noise-mix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(args);
    if (pre->parsed()) return run_pretrain(args, data_dir);
    if (train->parsed()) return run_train(args, data_dir, ckpt);
    if (eval->parsed()) return run_eval(args, data_dir, ckpt);
    if (demo->parsed()) return run_filter_demo(args, desc, bin);
    if (ablate->parsed()) return run_ablate(args, data_dir, ckpt, axis);
  } catch (const rfseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const rfseg::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
