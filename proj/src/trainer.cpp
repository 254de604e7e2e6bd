#include "psgcd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "psgcd/errors.hpp"
#include "psgcd/kernels.hpp"

namespace psgcd {

namespace k = kernels;
using nlohmann::json;

namespace {
constexpr const char* kCheckpointMagic = "PSGCKPT1";
constexpr const char* kToolVersion = "0.1.0";
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
}  // namespace

const char* to_string(HeadKind kk) {
  return kk == HeadKind::kPoint ? "point" : "subspace";
}
const char* to_string(OptimizerKind kk) {
  return kk == OptimizerKind::kSgd ? "sgd" : "adam";
}
const char* to_string(LrSchedule kk) {
  return kk == LrSchedule::kConstant ? "constant" : "cosine";
}
const char* to_string(EncoderKind kk) {
  switch (kk) {
    case EncoderKind::kIdentity: return "identity";
    case EncoderKind::kLinear: return "linear";
    case EncoderKind::kMlp: return "mlp";
    case EncoderKind::kCnn: return "cnn";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("train.labeled_fraction must lie in [0,1]");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
  if (stop_after_epoch < 0 || stop_after_epoch > epochs)
    throw ConfigError("train.stop_after_epoch must lie in [0, epochs]");
  if (head_rank < 1) throw ConfigError("head.rank must be >= 1");
  if (enc_hidden < 1 || embed_dim < 1) throw ConfigError("encoder dims must be >= 1");
  if (conv_channels.empty()) throw ConfigError("encoder.channels must not be empty");
  for (int c : conv_channels)
    if (c < 1) throw ConfigError("encoder.channels entries must be >= 1");
  const double probs[] = {aug.prob_rotate, aug.prob_flip_h, aug.prob_flip_v};
  for (double p : probs)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("aug probabilities must lie in [0,1]");
  if (!(aug.noise_rel >= 0.0)) throw ConfigError("aug.noise_rel must be >= 0");
  loss.validate();
}

BatchSampler::BatchSampler(const GcdSplit& split, int batch_size, double labeled_fraction,
                           Rng* rng)
    : base_labeled_(split.labeled_ids),
      base_unlabeled_(split.unlabeled_ids),
      labeled_queue_(split.labeled_ids),
      unlabeled_queue_(split.unlabeled_ids),
      batch_size_(batch_size),
      rng_(rng) {
  if (labeled_queue_.empty() && unlabeled_queue_.empty())
    throw DegenerateInputError("batch sampler: empty split");
  per_batch_labeled_ = int(std::llround(labeled_fraction * batch_size));
  if (labeled_queue_.empty()) per_batch_labeled_ = 0;
  if (unlabeled_queue_.empty()) per_batch_labeled_ = batch_size;
  const int pool = int(labeled_queue_.size() + unlabeled_queue_.size());
  steps_per_epoch_ = (pool + batch_size - 1) / batch_size;
}

void BatchSampler::begin_epoch() {
  // Re-shuffle from the split order so the epoch permutation is a function of
  // the rng state alone; resumed runs then replay the same sequence.
  labeled_queue_ = base_labeled_;
  unlabeled_queue_ = base_unlabeled_;
  rng_->shuffle(labeled_queue_);
  rng_->shuffle(unlabeled_queue_);
  labeled_pos_ = 0;
  unlabeled_pos_ = 0;
}

int BatchSampler::draw(std::vector<int>* queue, std::size_t* pos) {
  if (*pos >= queue->size()) {
    rng_->shuffle(*queue);
    *pos = 0;
  }
  return (*queue)[(*pos)++];
}

BatchSampler::Batch BatchSampler::next() {
  Batch batch;
  batch.ids.reserve(std::size_t(batch_size_));
  batch.labeled.reserve(std::size_t(batch_size_));
  for (int i = 0; i < batch_size_; ++i) {
    const bool lab = i < per_batch_labeled_;
    batch.ids.push_back(lab ? draw(&labeled_queue_, &labeled_pos_)
                            : draw(&unlabeled_queue_, &unlabeled_pos_));
    batch.labeled.push_back(lab ? 1 : 0);
  }
  return batch;
}

namespace {

ArchSpec build_arch(const TrainConfig& cfg, const SampleSet& data) {
  switch (cfg.encoder) {
    case EncoderKind::kIdentity:
      return ArchSpec::identity(data.bands, data.patch);
    case EncoderKind::kLinear:
      return ArchSpec::linear(data.bands, cfg.embed_dim, data.patch);
    case EncoderKind::kMlp:
      if (data.patch != 1)
        throw ConfigError("encoder.kind=mlp expects flat samples; use cnn for patches");
      return ArchSpec::mlp(data.bands, cfg.enc_hidden, cfg.embed_dim);
    case EncoderKind::kCnn:
      return ArchSpec::cnn(data.patch, data.bands, cfg.conv_channels, cfg.conv_kernel,
                           cfg.enc_hidden, cfg.embed_dim);
  }
  throw ConfigError("unknown encoder kind");
}

ModelState init_model(const TrainConfig& cfg, const SampleSet& data, int num_classes) {
  ModelState model;
  model.encoder = EncoderParams::init(build_arch(cfg, data), derive_seed(cfg.seed, "encoder"));
  model.head = cfg.head;
  model.num_classes = num_classes;
  const int d = model.encoder.arch.embed_dim;
  if (cfg.head == HeadKind::kSubspace) {
    model.bases = init_bases(num_classes, cfg.head_rank, d, derive_seed(cfg.seed, "bases"));
  } else {
    model.point = PointPrototypes::init(num_classes, d, derive_seed(cfg.seed, "prototypes"));
  }
  return model;
}

std::vector<Matrix*> model_params(ModelState& model) {
  std::vector<Matrix*> out;
  for (Matrix& w : model.encoder.weights) out.push_back(&w);
  out.push_back(model.head == HeadKind::kSubspace ? &model.bases.u : &model.point.c);
  return out;
}

double scheduled_lr(const TrainConfig& cfg, long long step, long long total_steps) {
  if (cfg.schedule == LrSchedule::kConstant) return cfg.lr;
  const double t = total_steps > 0 ? double(step) / double(total_steps) : 0.0;
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

const char* nonfinite_term(const LossBreakdown& b) {
  if (!std::isfinite(b.rep_u)) return "rep_u";
  if (!std::isfinite(b.rep_s)) return "rep_s";
  if (!std::isfinite(b.cls_u)) return "cls_u";
  if (!std::isfinite(b.cls_s)) return "cls_s";
  if (!std::isfinite(b.orth)) return "orth";
  if (!std::isfinite(b.rec)) return "rec";
  if (!std::isfinite(b.total)) return "total";
  return nullptr;
}

std::vector<double> band_noise_sigma(const SampleSet& data, const GcdSplit& split,
                                     double noise_rel) {
  std::vector<int> train_ids = split.labeled_ids;
  train_ids.insert(train_ids.end(), split.unlabeled_ids.begin(), split.unlabeled_ids.end());
  BandStats stats = compute_band_stats(data, train_ids);
  std::vector<double> sigma(stats.stdev.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = noise_rel * stats.stdev[i];
  return sigma;
}

}  // namespace

Matrix embed(const ModelState& model, const SampleSet& data, const std::vector<int>& ids) {
  const int chunk = 512;
  Matrix out(int(ids.size()), model.encoder.arch.embed_dim);
  for (int start = 0; start < int(ids.size()); start += chunk) {
    const int n = std::min(chunk, int(ids.size()) - start);
    Matrix rows(n, data.x.cols());
    for (int i = 0; i < n; ++i)
      std::copy(data.x.row(ids[std::size_t(start + i)]),
                data.x.row(ids[std::size_t(start + i)]) + data.x.cols(), rows.row(i));
    Matrix z = encoder_forward_eval(model.encoder, rows);
    for (int i = 0; i < n; ++i)
      std::copy(z.row(i), z.row(i) + z.cols(), out.row(start + i));
  }
  return out;
}

std::vector<int> predict(const ModelState& model, const SampleSet& data,
                         const std::vector<int>& ids) {
  Matrix z = embed(model, data, ids);
  Matrix scores = model.head == HeadKind::kSubspace ? projection_scores(model.bases, z)
                                                    : point_logits(model.point, z, 1.0);
  std::vector<int> preds(ids.size(), 0);
  for (int i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    preds[std::size_t(i)] = best;
  }
  return preds;
}

MetricsReport evaluate_model(const ModelState& model, const SampleSet& data,
                             const GcdSplit& split) {
  if (split.test_ids.empty())
    throw DegenerateInputError("evaluate: split has no held-out test samples");
  std::vector<int> preds = predict(model, data, split.test_ids);
  std::vector<int> truth;
  for (int id : split.test_ids) truth.push_back(data.labels[std::size_t(id)]);
  return gcd_accuracy(preds, truth, split.labeled_classes, split.num_classes);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

json arch_to_json(const ArchSpec& arch) {
  json layers = json::array();
  for (const LayerSpec& l : arch.layers) {
    json e;
    switch (l.kind) {
      case LayerSpec::Kind::kConv2d:
        e["kind"] = "conv2d";
        e["kernel"] = l.kernel;
        e["in_ch"] = l.in_ch;
        e["out_ch"] = l.out_ch;
        e["stride"] = l.stride;
        e["bias"] = l.bias;
        break;
      case LayerSpec::Kind::kDense:
        e["kind"] = "dense";
        e["in"] = l.in;
        e["out"] = l.out;
        e["bias"] = l.bias;
        break;
      case LayerSpec::Kind::kBatchnorm:
        e["kind"] = "batchnorm";
        break;
      case LayerSpec::Kind::kRelu:
        e["kind"] = "relu";
        break;
      case LayerSpec::Kind::kFlatten:
        e["kind"] = "flatten";
        break;
    }
    layers.push_back(e);
  }
  return json{{"patch", arch.patch}, {"bands", arch.bands}, {"embed_dim", arch.embed_dim},
              {"layers", layers}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec arch;
  arch.patch = j.at("patch").get<int>();
  arch.bands = j.at("bands").get<int>();
  arch.embed_dim = j.at("embed_dim").get<int>();
  for (const json& e : j.at("layers")) {
    LayerSpec l;
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "conv2d") {
      l.kind = LayerSpec::Kind::kConv2d;
      l.kernel = e.at("kernel").get<int>();
      l.in_ch = e.at("in_ch").get<int>();
      l.out_ch = e.at("out_ch").get<int>();
      l.stride = e.at("stride").get<int>();
      l.bias = e.at("bias").get<bool>();
    } else if (kind == "dense") {
      l.kind = LayerSpec::Kind::kDense;
      l.in = e.at("in").get<int>();
      l.out = e.at("out").get<int>();
      l.bias = e.at("bias").get<bool>();
    } else if (kind == "batchnorm") {
      l.kind = LayerSpec::Kind::kBatchnorm;
    } else if (kind == "relu") {
      l.kind = LayerSpec::Kind::kRelu;
    } else if (kind == "flatten") {
      l.kind = LayerSpec::Kind::kFlatten;
    } else {
      throw IngestionError("checkpoint: unknown layer kind \"" + kind + "\"");
    }
    arch.layers.push_back(l);
  }
  arch.validate();
  return arch;
}

json config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["labeled_fraction"] = cfg.labeled_fraction;
  j["optimizer"] = to_string(cfg.optimizer);
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["schedule"] = to_string(cfg.schedule);
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["head"] = to_string(cfg.head);
  j["head_rank"] = cfg.head_rank;
  j["orth_on"] = cfg.ablation.orth_on;
  j["rec_on"] = cfg.ablation.rec_on;
  j["eval_every"] = cfg.eval_every;
  j["stop_after_epoch"] = cfg.stop_after_epoch;
  j["encoder"] = to_string(cfg.encoder);
  j["enc_hidden"] = cfg.enc_hidden;
  j["embed_dim"] = cfg.embed_dim;
  j["conv_channels"] = cfg.conv_channels;
  j["conv_kernel"] = cfg.conv_kernel;
  j["loss"] = {{"lambda", cfg.loss.lambda},
               {"epsilon", cfg.loss.epsilon},
               {"tau_u", cfg.loss.tau_u},
               {"tau_s", cfg.loss.tau_s},
               {"tau_c", cfg.loss.tau_c},
               {"tau_t", cfg.loss.tau_t},
               {"w_orth", cfg.loss.w_orth},
               {"w_rec", cfg.loss.w_rec},
               {"entropy_normalized", cfg.loss.entropy_normalized},
               {"pool", cfg.loss.pool == LossWeights::Pool::kCrossView ? "cross" : "multiview"}};
  j["aug"] = {{"noise_rel", cfg.aug.noise_rel},
              {"prob_rotate", cfg.aug.prob_rotate},
              {"prob_flip_h", cfg.aug.prob_flip_h},
              {"prob_flip_v", cfg.aug.prob_flip_v}};
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.labeled_fraction = j.at("labeled_fraction").get<double>();
  cfg.optimizer =
      j.at("optimizer").get<std::string>() == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
  cfg.lr = j.at("lr").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.schedule = j.at("schedule").get<std::string>() == "constant" ? LrSchedule::kConstant
                                                                   : LrSchedule::kCosine;
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.head = j.at("head").get<std::string>() == "point" ? HeadKind::kPoint : HeadKind::kSubspace;
  cfg.head_rank = j.at("head_rank").get<int>();
  cfg.ablation.orth_on = j.at("orth_on").get<bool>();
  cfg.ablation.rec_on = j.at("rec_on").get<bool>();
  cfg.eval_every = j.at("eval_every").get<int>();
  cfg.stop_after_epoch = j.at("stop_after_epoch").get<int>();
  const std::string enc = j.at("encoder").get<std::string>();
  cfg.encoder = enc == "identity" ? EncoderKind::kIdentity
                : enc == "linear" ? EncoderKind::kLinear
                : enc == "cnn"    ? EncoderKind::kCnn
                                  : EncoderKind::kMlp;
  cfg.enc_hidden = j.at("enc_hidden").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  cfg.conv_kernel = j.at("conv_kernel").get<int>();
  const json& l = j.at("loss");
  cfg.loss.lambda = l.at("lambda").get<double>();
  cfg.loss.epsilon = l.at("epsilon").get<double>();
  cfg.loss.tau_u = l.at("tau_u").get<double>();
  cfg.loss.tau_s = l.at("tau_s").get<double>();
  cfg.loss.tau_c = l.at("tau_c").get<double>();
  cfg.loss.tau_t = l.at("tau_t").get<double>();
  cfg.loss.w_orth = l.at("w_orth").get<double>();
  cfg.loss.w_rec = l.at("w_rec").get<double>();
  cfg.loss.entropy_normalized = l.at("entropy_normalized").get<bool>();
  cfg.loss.pool = l.at("pool").get<std::string>() == "multiview" ? LossWeights::Pool::kMultiview
                                                                 : LossWeights::Pool::kCrossView;
  const json& a = j.at("aug");
  cfg.aug.noise_rel = a.at("noise_rel").get<double>();
  cfg.aug.prob_rotate = a.at("prob_rotate").get<double>();
  cfg.aug.prob_flip_h = a.at("prob_flip_h").get<double>();
  cfg.aug.prob_flip_v = a.at("prob_flip_v").get<double>();
  return cfg;
}

void append_array(json& list, std::vector<const Matrix*>& order, const std::string& name,
                  const Matrix& m) {
  list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  order.push_back(&m);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["format_version"] = 1;
  header["tool_version"] = kToolVersion;
  header["epoch"] = ckpt.epoch;
  header["rng_state"] = ckpt.rng_state;
  header["head"] = to_string(ckpt.model.head);
  header["num_classes"] = ckpt.model.num_classes;
  header["rank"] = ckpt.model.head == HeadKind::kSubspace ? ckpt.model.bases.rank : 0;
  header["encoder_seed"] = ckpt.model.encoder.seed;
  header["config"] = config_to_json(ckpt.config);
  header["arch"] = arch_to_json(ckpt.model.encoder.arch);
  header["weight_names"] = ckpt.model.encoder.names;
  header["opt_step"] = ckpt.opt.step;

  json arrays = json::array();
  std::vector<const Matrix*> order;
  for (std::size_t i = 0; i < ckpt.model.encoder.weights.size(); ++i)
    append_array(arrays, order, ckpt.model.encoder.names[i], ckpt.model.encoder.weights[i]);
  for (std::size_t i = 0; i < ckpt.model.encoder.bn_run_mean.size(); ++i) {
    append_array(arrays, order, "bn_stats.mean." + std::to_string(i),
                 ckpt.model.encoder.bn_run_mean[i]);
    append_array(arrays, order, "bn_stats.var." + std::to_string(i),
                 ckpt.model.encoder.bn_run_var[i]);
  }
  if (ckpt.model.head == HeadKind::kSubspace)
    append_array(arrays, order, "head.u", ckpt.model.bases.u);
  else
    append_array(arrays, order, "head.c", ckpt.model.point.c);
  for (std::size_t i = 0; i < ckpt.opt.momentum.size(); ++i)
    append_array(arrays, order, "opt.momentum." + std::to_string(i), ckpt.opt.momentum[i]);
  for (std::size_t i = 0; i < ckpt.opt.adam_m.size(); ++i) {
    append_array(arrays, order, "opt.adam_m." + std::to_string(i), ckpt.opt.adam_m[i]);
    append_array(arrays, order, "opt.adam_v." + std::to_string(i), ckpt.opt.adam_v[i]);
  }
  header["arrays"] = arrays;

  const std::string head_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = head_str.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(head_str.data(), std::streamsize(head_str.size()));
  for (const Matrix* m : order)
    out.write(reinterpret_cast<const char*>(m->data()), std::streamsize(m->size() * 8));
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IngestionError("checkpoint: " + path + ": bad magic, expected PSGCKPT1");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (in.gcount() != 8) throw IngestionError("checkpoint: " + path + ": truncated header length");
  std::string head_str(len, '\0');
  in.read(head_str.data(), std::streamsize(len));
  if (std::uint64_t(in.gcount()) != len)
    throw IngestionError("checkpoint: " + path + ": truncated header");
  json header;
  try {
    header = json::parse(head_str);
  } catch (const json::exception& e) {
    throw IngestionError("checkpoint: " + path + ": malformed header: " + e.what());
  }
  if (header.at("format_version").get<int>() != 1)
    throw IngestionError("checkpoint: " + path + ": unsupported format version");

  Checkpoint ckpt;
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.rng_state = header.at("rng_state").get<std::string>();
  ckpt.config = config_from_json(header.at("config"));
  ckpt.model.head =
      header.at("head").get<std::string>() == "point" ? HeadKind::kPoint : HeadKind::kSubspace;
  ckpt.model.num_classes = header.at("num_classes").get<int>();
  ckpt.model.encoder.arch = arch_from_json(header.at("arch"));
  ckpt.model.encoder.seed = header.at("encoder_seed").get<std::uint64_t>();
  ckpt.model.encoder.names = header.at("weight_names").get<std::vector<std::string>>();
  ckpt.opt.step = header.at("opt_step").get<long long>();

  auto read_matrix = [&in, &path](int rows, int cols) {
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.size() * 8));
    if (std::size_t(in.gcount()) != m.size() * 8)
      throw IngestionError("checkpoint: " + path + ": truncated array data");
    return m;
  };
  for (const json& e : header.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    Matrix m = read_matrix(e.at("rows").get<int>(), e.at("cols").get<int>());
    if (name.rfind("bn_stats.mean.", 0) == 0)
      ckpt.model.encoder.bn_run_mean.push_back(std::move(m));
    else if (name.rfind("bn_stats.var.", 0) == 0)
      ckpt.model.encoder.bn_run_var.push_back(std::move(m));
    else if (name == "head.u")
      ckpt.model.bases.u = std::move(m);
    else if (name == "head.c")
      ckpt.model.point.c = std::move(m);
    else if (name.rfind("opt.momentum.", 0) == 0)
      ckpt.opt.momentum.push_back(std::move(m));
    else if (name.rfind("opt.adam_m.", 0) == 0)
      ckpt.opt.adam_m.push_back(std::move(m));
    else if (name.rfind("opt.adam_v.", 0) == 0)
      ckpt.opt.adam_v.push_back(std::move(m));
    else
      ckpt.model.encoder.weights.push_back(std::move(m));
  }
  if (ckpt.model.head == HeadKind::kSubspace) {
    ckpt.model.bases.rank = header.at("rank").get<int>();
    ckpt.model.bases.num_classes = ckpt.model.num_classes;
    ckpt.model.bases.mask = inter_block_mask(ckpt.model.num_classes, ckpt.model.bases.rank);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct LossLogFile {
  std::FILE* f = nullptr;
  explicit LossLogFile(const std::string& path, bool append) {
    if (path.empty()) return;
    f = std::fopen(path.c_str(), append ? "a" : "w");
    if (!f) throw IoError("train: cannot open loss log " + path);
    if (!append)
      std::fprintf(f, "step,rep_u,rep_s,cls_u,cls_s,orth,rec,entropy,total,lr,rep_s_sum,"
                      "sup_skipped\n");
  }
  ~LossLogFile() {
    if (f) std::fclose(f);
  }
  void write(const TrainLogRow& row) {
    if (!f) return;
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                 row.step, row.terms.rep_u, row.terms.rep_s, row.terms.cls_u, row.terms.cls_s,
                 row.terms.orth, row.terms.rec, row.terms.entropy, row.terms.total, row.lr,
                 row.terms.sup_unnormalized, row.terms.sup_anchors_skipped);
  }
};

void write_history(const std::vector<MetricsReport>& history, const std::string& path) {
  if (path.empty()) return;
  json arr = json::array();
  for (const MetricsReport& m : history)
    arr.push_back(json::parse(metrics_to_json(m)));
  std::ofstream out(path);
  if (!out) throw IoError("train: cannot write metric history " + path);
  out << arr.dump(2) << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const SampleSet& data, const GcdSplit& split,
                  const std::string& out_dir, const Checkpoint* resume) {
  cfg.validate();
  if (split.num_classes < 2) throw ConfigError("train: split needs at least 2 classes");
  const int num_classes = split.num_classes;

  ModelState model;
  OptState opt;
  Rng rng(derive_seed(cfg.seed, "train_loop"));
  int start_epoch = 0;
  if (resume) {
    model = resume->model;
    opt = resume->opt;
    rng.set_state(resume->rng_state);
    start_epoch = resume->epoch;
  } else {
    model = init_model(cfg, data, num_classes);
  }
  if (cfg.head == HeadKind::kSubspace && num_classes * cfg.head_rank > model.encoder.arch.embed_dim)
    throw ConfigError("train: K*r = " + std::to_string(num_classes * cfg.head_rank) +
                      " exceeds embed_dim = " + std::to_string(model.encoder.arch.embed_dim));

  std::vector<Matrix*> params = model_params(model);
  if (!resume) {
    if (cfg.optimizer == OptimizerKind::kSgd) {
      for (Matrix* p : params) opt.momentum.push_back(Matrix(p->rows(), p->cols()));
    } else {
      for (Matrix* p : params) {
        opt.adam_m.push_back(Matrix(p->rows(), p->cols()));
        opt.adam_v.push_back(Matrix(p->rows(), p->cols()));
      }
    }
  }

  Augmentor augmentor(cfg.aug, band_noise_sigma(data, split, cfg.aug.noise_rel));
  BatchSampler sampler(split, cfg.batch_size, cfg.labeled_fraction, &rng);
  const long long total_steps = (long long)cfg.epochs * sampler.steps_per_epoch();

  TrainResult result;
  const std::string log_path = out_dir.empty() ? "" : out_dir + "/loss_log.csv";
  LossLogFile log_file(log_path, resume != nullptr);

  const int end_epoch = cfg.stop_after_epoch > 0 ? cfg.stop_after_epoch : cfg.epochs;
  long long step = opt.step;
  const int in_cols = data.x.cols();

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    sampler.begin_epoch();
    for (int s = 0; s < sampler.steps_per_epoch(); ++s, ++step) {
      BatchSampler::Batch batch = sampler.next();
      const int n = int(batch.ids.size());

      Matrix view_a(n, in_cols), view_b(n, in_cols);
      std::vector<int> labels(std::size_t(n), -1);
      std::vector<std::uint8_t> mask(std::size_t(n), 0);
      std::vector<double> window(std::size_t(in_cols), 0.0);
      for (int i = 0; i < n; ++i) {
        const int id = batch.ids[std::size_t(i)];
        std::copy(data.x.row(id), data.x.row(id) + in_cols, window.begin());
        std::vector<double> aug_a = augmentor.apply(window, data.patch, data.bands, rng);
        std::vector<double> aug_b = augmentor.apply(window, data.patch, data.bands, rng);
        std::copy(aug_a.begin(), aug_a.end(), view_a.row(i));
        std::copy(aug_b.begin(), aug_b.end(), view_b.row(i));
        if (batch.labeled[std::size_t(i)]) {
          mask[std::size_t(i)] = 1;
          labels[std::size_t(i)] = data.labels[std::size_t(id)];
        }
      }

      Tape tape;
      EncoderVars enc_vars = register_encoder(tape, model.encoder);
      Var head_var = tape.param(cfg.head == HeadKind::kSubspace ? model.bases.u : model.point.c);
      Var za = encoder_forward(tape, model.encoder, enc_vars, tape.input(std::move(view_a)),
                               EncMode::kTrain);
      Var zb = encoder_forward(tape, model.encoder, enc_vars, tape.input(std::move(view_b)),
                               EncMode::kTrain);
      HeadVars head;
      head.num_classes = num_classes;
      if (cfg.head == HeadKind::kSubspace) {
        head.subspace = true;
        head.bases_u = head_var;
        head.rank = model.bases.rank;
        head.mask = &model.bases.mask;
      } else {
        head.point_c = head_var;
      }
      LossBreakdown breakdown;
      LossTerms terms =
          total_loss(tape, za, zb, labels, mask, head, cfg.loss, cfg.ablation, &breakdown);

      if (const char* bad = nonfinite_term(breakdown)) {
        if (!out_dir.empty()) {
          Checkpoint last_good{model, opt, cfg, epoch, rng.state()};
          save_checkpoint(last_good, out_dir + "/last_good.ckpt");
        }
        throw TrainingDiverged("train: non-finite loss term \"" + std::string(bad) +
                                   "\" at step " + std::to_string(step),
                               bad);
      }

      tape.backward(terms.total);

      const double lr_t = scheduled_lr(cfg, step, total_steps);
      std::vector<Var> param_vars = enc_vars.weights;
      param_vars.push_back(head_var);
      for (std::size_t p = 0; p < params.size(); ++p) {
        const Matrix& g = tape.grad(param_vars[p]);
        Matrix& w = *params[p];
        if (cfg.optimizer == OptimizerKind::kSgd) {
          Matrix& v = opt.momentum[p];
          for (std::size_t i = 0; i < w.size(); ++i) {
            const double grad = g.data()[i] + cfg.weight_decay * w.data()[i];
            v.data()[i] = cfg.momentum * v.data()[i] + grad;
            w.data()[i] -= lr_t * v.data()[i];
          }
        } else {
          Matrix& m = opt.adam_m[p];
          Matrix& v = opt.adam_v[p];
          const double bc1 = 1.0 - std::pow(kAdamBeta1, double(step + 1));
          const double bc2 = 1.0 - std::pow(kAdamBeta2, double(step + 1));
          for (std::size_t i = 0; i < w.size(); ++i) {
            const double grad = g.data()[i] + cfg.weight_decay * w.data()[i];
            m.data()[i] = kAdamBeta1 * m.data()[i] + (1.0 - kAdamBeta1) * grad;
            v.data()[i] = kAdamBeta2 * v.data()[i] + (1.0 - kAdamBeta2) * grad * grad;
            w.data()[i] -= lr_t * (m.data()[i] / bc1) / (std::sqrt(v.data()[i] / bc2) + kAdamEps);
          }
        }
      }

      TrainLogRow row{step, breakdown, lr_t};
      result.log.push_back(row);
      log_file.write(row);
    }

    const bool last = epoch + 1 == end_epoch;
    if (!split.test_ids.empty() &&
        ((cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) || last)) {
      MetricsReport rep = evaluate_model(model, data, split);
      rep.epoch = epoch + 1;
      result.history.push_back(rep);
    }
  }

  opt.step = step;
  result.checkpoint = Checkpoint{std::move(model), std::move(opt), cfg, end_epoch, rng.state()};
  if (!out_dir.empty()) {
    save_checkpoint(result.checkpoint, out_dir + "/checkpoint.bin");
    write_history(result.history, out_dir + "/metrics_history.json");
    if (!result.history.empty())
      save_metrics(result.history.back(), out_dir + "/final_metrics.json");
  }
  return result;
}

std::vector<SweepRow> sweep_epsilon(const TrainConfig& base, const SampleSet& data,
                                    const GcdSplit& split, const std::vector<double>& values,
                                    const std::string& out_dir) {
  if (values.empty()) throw ConfigError("sweep: empty epsilon list");
  for (double v : values)
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError("sweep: epsilon values must be finite and >= 0");
  std::vector<SweepRow> rows;
  for (double eps : values) {
    TrainConfig cfg = base;
    cfg.loss.epsilon = eps;
    std::string run_dir;
    if (!out_dir.empty()) {
      std::ostringstream os;
      os << out_dir << "/eps_" << eps;
      run_dir = os.str();
      std::filesystem::create_directories(run_dir);
    }
    TrainResult res = train(cfg, data, split, run_dir);
    if (res.history.empty())
      throw ConfigError("sweep: training produced no evaluation (split has no test ids?)");
    rows.push_back(SweepRow{eps, res.history.back()});
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const SampleSet& data,
                                      const GcdSplit& split, const std::string& out_dir) {
  const std::vector<std::pair<std::string, AblationFlags>> variants = {
      {"full", {true, true}},
      {"no_orth", {false, true}},
      {"no_rec", {true, false}},
      {"no_orth_no_rec", {false, false}},
  };
  std::vector<AblationRow> rows;
  for (const auto& [name, flags] : variants) {
    TrainConfig cfg = base;
    cfg.ablation = flags;
    std::string run_dir;
    if (!out_dir.empty()) {
      run_dir = out_dir + "/" + name;
      std::filesystem::create_directories(run_dir);
    }
    TrainResult res = train(cfg, data, split, run_dir);
    if (res.history.empty())
      throw ConfigError("ablation: training produced no evaluation (split has no test ids?)");
    rows.push_back(AblationRow{name, flags, res.history.back()});
  }
  return rows;
}

}  // namespace psgcd
