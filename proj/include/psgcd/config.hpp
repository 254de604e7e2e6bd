#pragma once

#include <string>
#include <vector>

#include "psgcd/data.hpp"
#include "psgcd/trainer.hpp"

namespace psgcd {

// Fully resolved application configuration. The on-disk format is a flat
// key = value file with dotted keys; command-line overrides use the same
// syntax and win over the file.
struct AppConfig {
  std::uint64_t seed = 1;

  struct DataCfg {
    std::string source = "synth";      // synth | csv | cube
    std::string path;                  // input file for csv/cube
    std::string normalize = "zscore";  // none | zscore | minmax
    int patch_size = 9;                // cube sources only
  } data;

  struct SynthCfg {
    int classes = 6;
    int dim = 64;
    int rank = 3;
    int samples_per_class = 200;
    double noise_sigma = 0.05;
  } synth;

  struct SplitCfg {
    int num_labeled_classes = 0;  // 0: ceil(K/2), resolved against the data
    double label_ratio = 0.5;
    double train_fraction = 0.8;
    std::string path;  // optional precomputed split file
  } split;

  std::string encoder_kind = "auto";  // auto | identity | linear | mlp | cnn
  TrainConfig train;                  // loss, aug and optimizer settings included
  std::string head_kind = "subspace";

  struct EvalCfg {
    std::string checkpoint;
    int kmeans_restarts = 5;
  } eval;
};

struct ConfigIssue {
  std::string location;  // "file:line" or "override[i]" or a key name
  std::string message;
};

// Parses the file (empty path = all defaults) and applies overrides. All
// problems are collected rather than thrown, so callers can report the full
// list and exit with a usage error.
AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::vector<ConfigIssue>* issues);

// The resolved configuration echoed as a flat key -> value JSON object.
std::string config_echo_json(const AppConfig& cfg);

// One line per documented key: "key  default  description".
std::string config_key_reference();

}  // namespace psgcd
