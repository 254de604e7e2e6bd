#include "psgcd/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "psgcd/config.hpp"
#include "psgcd/data.hpp"
#include "psgcd/errors.hpp"
#include "psgcd/eval.hpp"
#include "psgcd/trainer.hpp"

namespace psgcd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Manifest {
  std::string command;
  AppConfig config;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void write(const std::string& out_dir) const {
    json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = config.seed;
    j["config"] = json::parse(config_echo_json(config));
    j["outputs"] = outputs;
    j["elapsed_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw IoError("manifest: cannot write " + out_dir + "/manifest.json");
    out << j.dump(2) << "\n";
  }
};

SampleSet load_data(const AppConfig& cfg) {
  if (cfg.data.source == "synth") {
    SynthSpec spec;
    spec.num_classes = cfg.synth.classes;
    spec.ambient_dim = cfg.synth.dim;
    spec.rank = cfg.synth.rank;
    spec.samples_per_class = cfg.synth.samples_per_class;
    spec.noise_sigma = cfg.synth.noise_sigma;
    spec.seed = cfg.seed;
    return generate_synthetic(spec).samples;
  }
  if (cfg.data.source == "csv") return load_table_csv(cfg.data.path);
  HsiCube cube = load_cube(cfg.data.path);
  return extract_patches(cube, cfg.data.patch_size);
}

GcdSplit resolve_split(const AppConfig& cfg, const SampleSet& data) {
  if (!cfg.split.path.empty()) return load_split(cfg.split.path);
  const int num_classes = data.num_classes();
  const int labeled = cfg.split.num_labeled_classes > 0 ? cfg.split.num_labeled_classes
                                                        : (num_classes + 1) / 2;
  return make_split(data.labels, labeled, cfg.split.label_ratio, cfg.seed,
                    cfg.split.train_fraction);
}

void apply_normalization(const AppConfig& cfg, SampleSet& data, const GcdSplit& split) {
  if (cfg.data.normalize == "none") return;
  std::vector<int> train_ids = split.labeled_ids;
  train_ids.insert(train_ids.end(), split.unlabeled_ids.begin(), split.unlabeled_ids.end());
  const BandStats stats = compute_band_stats(data, train_ids);
  normalize_bands(data,
                  cfg.data.normalize == "zscore" ? NormalizeMode::kZScore : NormalizeMode::kMinMax,
                  stats);
}

// Resolves "auto" against the data source and pins identity dimensions.
void resolve_encoder(AppConfig& cfg) {
  std::string kind = cfg.encoder_kind;
  if (kind == "auto") kind = cfg.data.source == "cube" ? "cnn" : "mlp";
  cfg.encoder_kind = kind;
  cfg.train.encoder = kind == "identity" ? EncoderKind::kIdentity
                      : kind == "linear" ? EncoderKind::kLinear
                      : kind == "cnn"    ? EncoderKind::kCnn
                                         : EncoderKind::kMlp;
}

void print_metrics(const MetricsReport& m, const std::string& tag) {
  std::cout << tag << ": All " << m.acc_all << "  Old " << m.acc_old << "  New " << m.acc_new
            << "  (n=" << m.n_all << ")\n";
}

int cmd_synth(const AppConfig& cfg, Manifest& manifest, const std::string& out_dir) {
  if (cfg.data.source != "synth")
    throw ConfigError("synth: data.source must be \"synth\" for this command");
  SynthSpec spec;
  spec.num_classes = cfg.synth.classes;
  spec.ambient_dim = cfg.synth.dim;
  spec.rank = cfg.synth.rank;
  spec.samples_per_class = cfg.synth.samples_per_class;
  spec.noise_sigma = cfg.synth.noise_sigma;
  spec.seed = cfg.seed;
  SynthResult res = generate_synthetic(spec);

  save_table_csv(res.samples, out_dir + "/data.csv");
  json meta;
  meta["classes"] = spec.num_classes;
  meta["dim"] = spec.ambient_dim;
  meta["rank"] = spec.rank;
  meta["samples_per_class"] = spec.samples_per_class;
  meta["noise_sigma"] = spec.noise_sigma;
  meta["seed"] = spec.seed;
  std::vector<std::vector<double>> bases(std::size_t(res.true_bases.rows()));
  for (int i = 0; i < res.true_bases.rows(); ++i)
    for (int j = 0; j < res.true_bases.cols(); ++j)
      bases[std::size_t(i)].push_back(res.true_bases(i, j));
  meta["true_bases"] = bases;
  std::ofstream out(out_dir + "/meta.json");
  if (!out) throw IoError("synth: cannot write meta.json");
  out << meta.dump() << "\n";

  manifest.outputs = {"data.csv", "meta.json"};
  std::cout << "wrote " << res.samples.size() << " samples (" << spec.num_classes << " classes, "
            << spec.ambient_dim << " bands) to " << out_dir << "/data.csv\n";
  return 0;
}

int cmd_split(const AppConfig& cfg, Manifest& manifest, const std::string& out_dir) {
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  save_split(split, out_dir + "/split.json");
  manifest.outputs = {"split.json"};
  std::cout << "split: " << split.labeled_ids.size() << " labeled, " << split.unlabeled_ids.size()
            << " unlabeled, " << split.test_ids.size() << " held out ("
            << split.labeled_classes.size() << " known classes of " << split.num_classes << ")\n";
  return 0;
}

int cmd_train(AppConfig& cfg, Manifest& manifest, const std::string& out_dir,
              const std::string& resume_path) {
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  apply_normalization(cfg, data, split);
  resolve_encoder(cfg);
  if (cfg.split.path.empty()) {
    save_split(split, out_dir + "/split.json");
    manifest.outputs.push_back("split.json");
  }
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
  }
  TrainResult res = train(cfg.train, data, split, out_dir, resume_ptr);
  manifest.outputs.insert(manifest.outputs.end(),
                          {"loss_log.csv", "checkpoint.bin", "metrics_history.json"});
  if (!res.history.empty()) {
    manifest.outputs.push_back("final_metrics.json");
    print_metrics(res.history.back(), "final");
  }
  return 0;
}

int cmd_eval(AppConfig& cfg, Manifest& manifest, const std::string& out_dir,
             const std::string& checkpoint_path, bool with_kmeans) {
  const std::string ckpt_path =
      !checkpoint_path.empty() ? checkpoint_path : cfg.eval.checkpoint;
  if (ckpt_path.empty())
    throw ConfigError("eval: no checkpoint given (use --checkpoint or eval.checkpoint)");
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  apply_normalization(cfg, data, split);

  MetricsReport rep = evaluate_model(ckpt.model, data, split);
  save_metrics(rep, out_dir + "/metrics.json");
  manifest.outputs = {"metrics.json"};
  print_metrics(rep, "head");

  if (with_kmeans) {
    Matrix z = embed(ckpt.model, data, split.test_ids);
    std::vector<int> assign = kmeans_baseline(z, split.num_classes,
                                              derive_seed(cfg.seed, "kmeans_baseline"),
                                              cfg.eval.kmeans_restarts);
    std::vector<int> truth;
    for (int id : split.test_ids) truth.push_back(data.labels[std::size_t(id)]);
    MetricsReport km = gcd_accuracy(assign, truth, split.labeled_classes, split.num_classes);
    save_metrics(km, out_dir + "/kmeans_metrics.json");
    manifest.outputs.push_back("kmeans_metrics.json");
    print_metrics(km, "kmeans");
  }
  return 0;
}

int cmd_ablate(AppConfig& cfg, Manifest& manifest, const std::string& out_dir) {
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  apply_normalization(cfg, data, split);
  resolve_encoder(cfg);
  if (cfg.train.head != HeadKind::kSubspace)
    throw ConfigError("ablate: the constraint ablation applies to the subspace head");
  std::vector<AblationRow> rows = run_ablation(cfg.train, data, split, out_dir);
  json arr = json::array();
  for (const AblationRow& r : rows) {
    arr.push_back({{"name", r.name},
                   {"orth_on", r.flags.orth_on},
                   {"rec_on", r.flags.rec_on},
                   {"acc_all", r.metrics.acc_all},
                   {"acc_old", r.metrics.acc_old},
                   {"acc_new", r.metrics.acc_new}});
    print_metrics(r.metrics, r.name);
  }
  std::ofstream out(out_dir + "/ablation_summary.json");
  if (!out) throw IoError("ablate: cannot write ablation_summary.json");
  out << arr.dump(2) << "\n";
  manifest.outputs = {"ablation_summary.json"};
  return 0;
}

int cmd_sweep(AppConfig& cfg, Manifest& manifest, const std::string& out_dir,
              const std::string& values_str) {
  std::vector<double> values;
  std::stringstream ss(values_str);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      values.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError("sweep-eps: cannot parse value \"" + cell + "\"");
    }
  }
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  apply_normalization(cfg, data, split);
  resolve_encoder(cfg);
  std::vector<SweepRow> rows = sweep_epsilon(cfg.train, data, split, values, out_dir);

  json arr = json::array();
  std::ofstream csv(out_dir + "/sweep_summary.csv");
  if (!csv) throw IoError("sweep-eps: cannot write sweep_summary.csv");
  csv << "epsilon,acc_all,acc_old,acc_new\n";
  for (const SweepRow& r : rows) {
    arr.push_back({{"epsilon", r.epsilon},
                   {"acc_all", r.metrics.acc_all},
                   {"acc_old", r.metrics.acc_old},
                   {"acc_new", r.metrics.acc_new}});
    csv << r.epsilon << "," << r.metrics.acc_all << "," << r.metrics.acc_old << ","
        << r.metrics.acc_new << "\n";
    std::ostringstream tag;
    tag << "eps=" << r.epsilon;
    print_metrics(r.metrics, tag.str());
  }
  std::ofstream out(out_dir + "/sweep_summary.json");
  if (!out) throw IoError("sweep-eps: cannot write sweep_summary.json");
  out << arr.dump(2) << "\n";
  manifest.outputs = {"sweep_summary.json", "sweep_summary.csv"};
  return 0;
}

int cmd_export_viz(AppConfig& cfg, Manifest& manifest, const std::string& out_dir,
                   const std::string& checkpoint_path) {
  const std::string ckpt_path =
      !checkpoint_path.empty() ? checkpoint_path : cfg.eval.checkpoint;
  if (ckpt_path.empty())
    throw ConfigError("export-viz: no checkpoint given (use --checkpoint or eval.checkpoint)");
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  SampleSet data = load_data(cfg);
  GcdSplit split = resolve_split(cfg, data);
  apply_normalization(cfg, data, split);

  Matrix z = embed(ckpt.model, data, split.test_ids);
  std::vector<int> preds = predict(ckpt.model, data, split.test_ids);
  std::vector<int> truth;
  for (int id : split.test_ids) truth.push_back(data.labels[std::size_t(id)]);
  export_cluster_distribution(z, preds, truth, out_dir + "/clusters.csv");
  manifest.outputs = {"clusters.csv"};
  std::cout << "wrote " << split.test_ids.size() << " projected points to " << out_dir
            << "/clusters.csv\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"prototype-subspace generalized category discovery for spectral data"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, values_str, resume_path;
  std::vector<std::string> overrides;
  bool with_kmeans = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (flat key = value lines)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set loss.epsilon=20");
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic union-of-subspaces table");
  add_common(synth);
  CLI::App* split_cmd = app.add_subcommand("split", "build the semi-supervised split");
  add_common(split_cmd);
  CLI::App* train_cmd = app.add_subcommand("train", "train encoder and classifier head");
  add_common(train_cmd);
  train_cmd->add_option("--resume", resume_path, "continue from a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out set");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate");
  eval_cmd->add_flag("--kmeans", with_kmeans, "also report the k-means baseline");
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train the four constraint configurations");
  add_common(ablate_cmd);
  CLI::App* sweep_cmd = app.add_subcommand("sweep-eps", "train once per entropy weight");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--values", values_str, "comma-separated epsilon list")->required();
  CLI::App* export_cmd = app.add_subcommand("export-viz", "export a 2-D cluster projection");
  add_common(export_cmd);
  export_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to project");
  CLI::App* keys_cmd = app.add_subcommand("config-keys", "print the config key reference");

  std::vector<std::string> argv_copy = args;
  try {
    std::vector<const char*> argv;
    argv.push_back("psgcd");
    for (const std::string& a : argv_copy) argv.push_back(a.c_str());
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  if (keys_cmd->parsed()) {
    std::cout << config_key_reference();
    return 0;
  }

  std::vector<ConfigIssue> issues;
  AppConfig cfg = load_config(config_path, overrides, &issues);
  if (!issues.empty()) {
    for (const ConfigIssue& issue : issues)
      std::cerr << "config error at " << issue.location << ": " << issue.message << "\n";
    return 2;
  }

  try {
    fs::create_directories(out_dir);
    Manifest manifest;
    manifest.config = cfg;
    int rc = 0;
    if (synth->parsed()) {
      manifest.command = "synth";
      rc = cmd_synth(cfg, manifest, out_dir);
    } else if (split_cmd->parsed()) {
      manifest.command = "split";
      rc = cmd_split(cfg, manifest, out_dir);
    } else if (train_cmd->parsed()) {
      manifest.command = "train";
      rc = cmd_train(cfg, manifest, out_dir, resume_path);
    } else if (eval_cmd->parsed()) {
      manifest.command = "eval";
      rc = cmd_eval(cfg, manifest, out_dir, checkpoint_path, with_kmeans);
    } else if (ablate_cmd->parsed()) {
      manifest.command = "ablate";
      rc = cmd_ablate(cfg, manifest, out_dir);
    } else if (sweep_cmd->parsed()) {
      manifest.command = "sweep-eps";
      rc = cmd_sweep(cfg, manifest, out_dir, values_str);
    } else if (export_cmd->parsed()) {
      manifest.command = "export-viz";
      rc = cmd_export_viz(cfg, manifest, out_dir, checkpoint_path);
    }
    manifest.write(out_dir);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace psgcd
