#include "psgcd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "psgcd/errors.hpp"

namespace psgcd {

using nlohmann::json;

namespace {

struct KeyDef {
  std::string name;
  std::string doc;
  std::function<std::string(AppConfig&, const std::string&)> set;  // returns error or ""
  std::function<std::string(const AppConfig&)> get;
};

std::string set_int(int* dst, const std::string& v) {
  try {
    std::size_t used = 0;
    const int parsed = std::stoi(v, &used);
    if (used != v.size()) return "not an integer: \"" + v + "\"";
    *dst = parsed;
    return "";
  } catch (const std::exception&) {
    return "not an integer: \"" + v + "\"";
  }
}

std::string set_u64(std::uint64_t* dst, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long parsed = std::stoull(v, &used);
    if (used != v.size()) return "not an unsigned integer: \"" + v + "\"";
    *dst = parsed;
    return "";
  } catch (const std::exception&) {
    return "not an unsigned integer: \"" + v + "\"";
  }
}

std::string set_double(double* dst, const std::string& v) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(v, &used);
    if (used != v.size()) return "not a number: \"" + v + "\"";
    *dst = parsed;
    return "";
  } catch (const std::exception&) {
    return "not a number: \"" + v + "\"";
  }
}

std::string set_bool(bool* dst, const std::string& v) {
  if (v == "true" || v == "1") {
    *dst = true;
    return "";
  }
  if (v == "false" || v == "0") {
    *dst = false;
    return "";
  }
  return "not a boolean (true/false): \"" + v + "\"";
}

std::string set_enum(std::string* dst, const std::string& v,
                     const std::vector<std::string>& allowed) {
  for (const auto& a : allowed)
    if (v == a) {
      *dst = v;
      return "";
    }
  std::string msg = "\"" + v + "\" is not one of {";
  for (std::size_t i = 0; i < allowed.size(); ++i)
    msg += (i ? ", " : "") + allowed[i];
  return msg + "}";
}

std::string set_int_list(std::vector<int>* dst, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    int value = 0;
    const std::string err = set_int(&value, cell);
    if (!err.empty()) return err;
    out.push_back(value);
  }
  if (out.empty()) return "empty list";
  *dst = out;
  return "";
}

template <typename T>
std::string show(T v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string show_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<KeyDef> schema() {
  using C = AppConfig;
  std::vector<KeyDef> defs;
  auto add = [&defs](std::string name, std::string doc,
                     std::function<std::string(C&, const std::string&)> set,
                     std::function<std::string(const C&)> get) {
    defs.push_back(KeyDef{std::move(name), std::move(doc), std::move(set), std::move(get)});
  };

  add("seed", "root seed; every random stream derives from it",
      [](C& c, const std::string& v) { return set_u64(&c.seed, v); },
      [](const C& c) { return show(c.seed); });

  add("data.source", "input kind: synth | csv | cube",
      [](C& c, const std::string& v) { return set_enum(&c.data.source, v, {"synth", "csv", "cube"}); },
      [](const C& c) { return c.data.source; });
  add("data.path", "input file for csv/cube sources",
      [](C& c, const std::string& v) { c.data.path = v; return std::string(); },
      [](const C& c) { return c.data.path; });
  add("data.normalize", "band normalization: none | zscore | minmax",
      [](C& c, const std::string& v) {
        return set_enum(&c.data.normalize, v, {"none", "zscore", "minmax"});
      },
      [](const C& c) { return c.data.normalize; });
  add("data.patch_size", "odd spatial window for cube sources",
      [](C& c, const std::string& v) { return set_int(&c.data.patch_size, v); },
      [](const C& c) { return show(c.data.patch_size); });

  add("synth.classes", "number of synthetic classes",
      [](C& c, const std::string& v) { return set_int(&c.synth.classes, v); },
      [](const C& c) { return show(c.synth.classes); });
  add("synth.dim", "synthetic ambient dimension (bands)",
      [](C& c, const std::string& v) { return set_int(&c.synth.dim, v); },
      [](const C& c) { return show(c.synth.dim); });
  add("synth.rank", "true per-class subspace rank",
      [](C& c, const std::string& v) { return set_int(&c.synth.rank, v); },
      [](const C& c) { return show(c.synth.rank); });
  add("synth.samples_per_class", "samples generated per class",
      [](C& c, const std::string& v) { return set_int(&c.synth.samples_per_class, v); },
      [](const C& c) { return show(c.synth.samples_per_class); });
  add("synth.noise_sigma", "isotropic noise scale",
      [](C& c, const std::string& v) { return set_double(&c.synth.noise_sigma, v); },
      [](const C& c) { return show(c.synth.noise_sigma); });

  add("split.num_labeled_classes", "known classes (0 = ceil(K/2))",
      [](C& c, const std::string& v) { return set_int(&c.split.num_labeled_classes, v); },
      [](const C& c) { return show(c.split.num_labeled_classes); });
  add("split.label_ratio", "fraction of each known class labeled",
      [](C& c, const std::string& v) { return set_double(&c.split.label_ratio, v); },
      [](const C& c) { return show(c.split.label_ratio); });
  add("split.train_fraction", "stratified train share; rest is held out",
      [](C& c, const std::string& v) { return set_double(&c.split.train_fraction, v); },
      [](const C& c) { return show(c.split.train_fraction); });
  add("split.path", "optional precomputed split JSON",
      [](C& c, const std::string& v) { c.split.path = v; return std::string(); },
      [](const C& c) { return c.split.path; });

  add("encoder.kind", "auto | identity | linear | mlp | cnn",
      [](C& c, const std::string& v) {
        return set_enum(&c.encoder_kind, v, {"auto", "identity", "linear", "mlp", "cnn"});
      },
      [](const C& c) { return c.encoder_kind; });
  add("encoder.hidden", "mlp hidden width / cnn projection width",
      [](C& c, const std::string& v) { return set_int(&c.train.enc_hidden, v); },
      [](const C& c) { return show(c.train.enc_hidden); });
  add("encoder.dim", "embedding dimension d",
      [](C& c, const std::string& v) { return set_int(&c.train.embed_dim, v); },
      [](const C& c) { return show(c.train.embed_dim); });
  add("encoder.channels", "cnn channel list, e.g. 32,64",
      [](C& c, const std::string& v) { return set_int_list(&c.train.conv_channels, v); },
      [](const C& c) { return show_list(c.train.conv_channels); });
  add("encoder.kernel", "cnn kernel side (odd)",
      [](C& c, const std::string& v) { return set_int(&c.train.conv_kernel, v); },
      [](const C& c) { return show(c.train.conv_kernel); });

  add("head.kind", "classifier head: subspace | point",
      [](C& c, const std::string& v) { return set_enum(&c.head_kind, v, {"subspace", "point"}); },
      [](const C& c) { return c.head_kind; });
  add("head.rank", "basis vectors per class subspace",
      [](C& c, const std::string& v) { return set_int(&c.train.head_rank, v); },
      [](const C& c) { return show(c.train.head_rank); });

  add("loss.lambda", "supervised/unsupervised balance in [0,1]",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.lambda, v); },
      [](const C& c) { return show(c.train.loss.lambda); });
  add("loss.epsilon", "mean-entropy regularization strength",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.epsilon, v); },
      [](const C& c) { return show(c.train.loss.epsilon); });
  add("loss.tau_u", "unsupervised contrastive temperature",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.tau_u, v); },
      [](const C& c) { return show(c.train.loss.tau_u); });
  add("loss.tau_s", "supervised contrastive temperature",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.tau_s, v); },
      [](const C& c) { return show(c.train.loss.tau_s); });
  add("loss.tau_c", "classifier temperature",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.tau_c, v); },
      [](const C& c) { return show(c.train.loss.tau_c); });
  add("loss.tau_t", "pseudo-label temperature, < tau_c",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.tau_t, v); },
      [](const C& c) { return show(c.train.loss.tau_t); });
  add("loss.w_orth", "orthogonality term weight",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.w_orth, v); },
      [](const C& c) { return show(c.train.loss.w_orth); });
  add("loss.w_rec", "reconstruction term weight",
      [](C& c, const std::string& v) { return set_double(&c.train.loss.w_rec, v); },
      [](const C& c) { return show(c.train.loss.w_rec); });
  add("loss.entropy_normalized", "divide H(mean prediction) by log K",
      [](C& c, const std::string& v) { return set_bool(&c.train.loss.entropy_normalized, v); },
      [](const C& c) { return c.train.loss.entropy_normalized ? "true" : "false"; });
  add("loss.pool", "contrastive denominator pool: cross | multiview",
      [](C& c, const std::string& v) {
        std::string s;
        const std::string err = set_enum(&s, v, {"cross", "multiview"});
        if (!err.empty()) return err;
        c.train.loss.pool =
            s == "multiview" ? LossWeights::Pool::kMultiview : LossWeights::Pool::kCrossView;
        return std::string();
      },
      [](const C& c) {
        return std::string(c.train.loss.pool == LossWeights::Pool::kMultiview ? "multiview"
                                                                              : "cross");
      });

  add("aug.noise_rel", "additive noise std relative to band std",
      [](C& c, const std::string& v) { return set_double(&c.train.aug.noise_rel, v); },
      [](const C& c) { return show(c.train.aug.noise_rel); });
  add("aug.prob_rotate", "probability of a 90/180/270 degree rotation",
      [](C& c, const std::string& v) { return set_double(&c.train.aug.prob_rotate, v); },
      [](const C& c) { return show(c.train.aug.prob_rotate); });
  add("aug.prob_flip_h", "probability of a horizontal flip",
      [](C& c, const std::string& v) { return set_double(&c.train.aug.prob_flip_h, v); },
      [](const C& c) { return show(c.train.aug.prob_flip_h); });
  add("aug.prob_flip_v", "probability of a vertical flip",
      [](C& c, const std::string& v) { return set_double(&c.train.aug.prob_flip_v, v); },
      [](const C& c) { return show(c.train.aug.prob_flip_v); });

  add("train.epochs", "training epochs",
      [](C& c, const std::string& v) { return set_int(&c.train.epochs, v); },
      [](const C& c) { return show(c.train.epochs); });
  add("train.batch_size", "samples per optimization step (>= 2)",
      [](C& c, const std::string& v) { return set_int(&c.train.batch_size, v); },
      [](const C& c) { return show(c.train.batch_size); });
  add("train.labeled_fraction", "labeled share of each batch",
      [](C& c, const std::string& v) { return set_double(&c.train.labeled_fraction, v); },
      [](const C& c) { return show(c.train.labeled_fraction); });
  add("train.optimizer", "sgd | adam",
      [](C& c, const std::string& v) {
        std::string s;
        const std::string err = set_enum(&s, v, {"sgd", "adam"});
        if (!err.empty()) return err;
        c.train.optimizer = s == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
        return std::string();
      },
      [](const C& c) { return std::string(to_string(c.train.optimizer)); });
  add("train.lr", "peak learning rate",
      [](C& c, const std::string& v) { return set_double(&c.train.lr, v); },
      [](const C& c) { return show(c.train.lr); });
  add("train.momentum", "sgd momentum",
      [](C& c, const std::string& v) { return set_double(&c.train.momentum, v); },
      [](const C& c) { return show(c.train.momentum); });
  add("train.schedule", "constant | cosine",
      [](C& c, const std::string& v) {
        std::string s;
        const std::string err = set_enum(&s, v, {"constant", "cosine"});
        if (!err.empty()) return err;
        c.train.schedule = s == "constant" ? LrSchedule::kConstant : LrSchedule::kCosine;
        return std::string();
      },
      [](const C& c) { return std::string(to_string(c.train.schedule)); });
  add("train.weight_decay", "l2 coupling added to gradients",
      [](C& c, const std::string& v) { return set_double(&c.train.weight_decay, v); },
      [](const C& c) { return show(c.train.weight_decay); });
  add("train.eval_every", "epochs between held-out evaluations (0 = final only)",
      [](C& c, const std::string& v) { return set_int(&c.train.eval_every, v); },
      [](const C& c) { return show(c.train.eval_every); });
  add("train.stop_after_epoch", "checkpoint and stop after this epoch (0 = run fully)",
      [](C& c, const std::string& v) { return set_int(&c.train.stop_after_epoch, v); },
      [](const C& c) { return show(c.train.stop_after_epoch); });
  add("train.orth_on", "include the orthogonality constraint",
      [](C& c, const std::string& v) { return set_bool(&c.train.ablation.orth_on, v); },
      [](const C& c) { return c.train.ablation.orth_on ? "true" : "false"; });
  add("train.rec_on", "include the reconstruction constraint",
      [](C& c, const std::string& v) { return set_bool(&c.train.ablation.rec_on, v); },
      [](const C& c) { return c.train.ablation.rec_on ? "true" : "false"; });

  add("eval.checkpoint", "checkpoint file for eval/export commands",
      [](C& c, const std::string& v) { c.eval.checkpoint = v; return std::string(); },
      [](const C& c) { return c.eval.checkpoint; });
  add("eval.kmeans_restarts", "restarts for the k-means baseline",
      [](C& c, const std::string& v) { return set_int(&c.eval.kmeans_restarts, v); },
      [](const C& c) { return show(c.eval.kmeans_restarts); });

  return defs;
}

const KeyDef* find_key(const std::vector<KeyDef>& defs, const std::string& name) {
  for (const KeyDef& d : defs)
    if (d.name == name) return &d;
  return nullptr;
}

// "key = value" or "key=value"; '#' starts a comment.
bool split_kv(const std::string& line, std::string* key, std::string* value) {
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos) return false;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    const std::size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return std::string();
    const std::size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
  };
  *key = trim(line.substr(0, eq));
  *value = trim(line.substr(eq + 1));
  return !key->empty();
}

void semantic_checks(AppConfig& cfg, std::vector<ConfigIssue>* issues) {
  auto issue = [issues](const std::string& loc, const std::string& msg) {
    issues->push_back(ConfigIssue{loc, msg});
  };
  if (cfg.data.source != "synth" && cfg.data.path.empty())
    issue("data.path", "required for data.source = " + cfg.data.source);
  if (cfg.data.patch_size < 1 || cfg.data.patch_size % 2 == 0)
    issue("data.patch_size", "must be odd and >= 1");
  try {
    SynthSpec spec;
    spec.num_classes = cfg.synth.classes;
    spec.ambient_dim = cfg.synth.dim;
    spec.rank = cfg.synth.rank;
    spec.samples_per_class = cfg.synth.samples_per_class;
    spec.noise_sigma = cfg.synth.noise_sigma;
    if (cfg.data.source == "synth") spec.validate();
  } catch (const ConfigError& e) {
    issue("synth", e.what());
  }
  if (!(cfg.split.label_ratio > 0.0 && cfg.split.label_ratio <= 1.0))
    issue("split.label_ratio", "must lie in (0, 1]");
  if (!(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction <= 1.0))
    issue("split.train_fraction", "must lie in (0, 1]");
  if (cfg.split.num_labeled_classes < 0)
    issue("split.num_labeled_classes", "must be >= 0 (0 = default)");
  cfg.train.head = cfg.head_kind == "point" ? HeadKind::kPoint : HeadKind::kSubspace;
  cfg.train.seed = cfg.seed;
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    issue("train", e.what());
  }
  if (cfg.eval.kmeans_restarts < 1) issue("eval.kmeans_restarts", "must be >= 1");
}

}  // namespace

AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::vector<ConfigIssue>* issues) {
  AppConfig cfg;
  const std::vector<KeyDef> defs = schema();

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) {
      issues->push_back(ConfigIssue{path, "cannot open config file"});
      return cfg;
    }
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      bool blank = true;
      for (char ch : line)
        if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
      if (blank) continue;
      const std::string loc = path + ":" + std::to_string(line_no);
      std::string key, value;
      if (!split_kv(line, &key, &value)) {
        issues->push_back(ConfigIssue{loc, "expected key = value"});
        continue;
      }
      const KeyDef* def = find_key(defs, key);
      if (!def) {
        issues->push_back(ConfigIssue{loc, "unknown key \"" + key + "\""});
        continue;
      }
      const std::string err = def->set(cfg, value);
      if (!err.empty()) issues->push_back(ConfigIssue{loc, key + ": " + err});
    }
  }

  for (std::size_t i = 0; i < overrides.size(); ++i) {
    const std::string loc = "override[" + std::to_string(i) + "]";
    std::string key, value;
    if (!split_kv(overrides[i], &key, &value)) {
      issues->push_back(ConfigIssue{loc, "expected key=value, got \"" + overrides[i] + "\""});
      continue;
    }
    const KeyDef* def = find_key(defs, key);
    if (!def) {
      issues->push_back(ConfigIssue{loc, "unknown key \"" + key + "\""});
      continue;
    }
    const std::string err = def->set(cfg, value);
    if (!err.empty()) issues->push_back(ConfigIssue{loc, key + ": " + err});
  }

  semantic_checks(cfg, issues);
  return cfg;
}

std::string config_echo_json(const AppConfig& cfg) {
  json j;
  for (const KeyDef& d : schema()) j[d.name] = d.get(cfg);
  return j.dump(2);
}

std::string config_key_reference() {
  std::ostringstream os;
  AppConfig defaults;
  for (const KeyDef& d : schema())
    os << d.name << " = " << d.get(defaults) << "\n    " << d.doc << "\n";
  return os.str();
}

}  // namespace psgcd
