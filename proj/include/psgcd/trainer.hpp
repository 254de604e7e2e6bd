#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psgcd/data.hpp"
#include "psgcd/encoder.hpp"
#include "psgcd/eval.hpp"
#include "psgcd/heads.hpp"
#include "psgcd/losses.hpp"

namespace psgcd {

enum class HeadKind { kPoint, kSubspace };
enum class OptimizerKind { kSgd, kAdam };
enum class LrSchedule { kConstant, kCosine };
enum class EncoderKind { kIdentity, kLinear, kMlp, kCnn };

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double labeled_fraction = 0.5;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double lr = 0.05;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::kCosine;
  double weight_decay = 5e-5;
  std::uint64_t seed = 1;
  LossWeights loss;
  HeadKind head = HeadKind::kSubspace;
  int head_rank = 4;
  AblationFlags ablation;
  int eval_every = 10;        // epochs between held-out evaluations; 0 = final only
  int stop_after_epoch = 0;   // checkpoint-and-stop for staged runs; 0 = run to epochs

  EncoderKind encoder = EncoderKind::kMlp;
  int enc_hidden = 256;
  int embed_dim = 128;
  std::vector<int> conv_channels = {32, 64};
  int conv_kernel = 3;

  AugmentConfig aug;

  void validate() const;
};

struct ModelState {
  EncoderParams encoder;
  HeadKind head = HeadKind::kSubspace;
  PointPrototypes point;
  PrototypeBases bases;
  int num_classes = 0;
};

struct OptState {
  std::vector<Matrix> momentum;        // sgd, one slot per parameter
  std::vector<Matrix> adam_m, adam_v;  // adam
  long long step = 0;
};

struct Checkpoint {
  ModelState model;
  OptState opt;
  TrainConfig config;
  int epoch = 0;
  std::string rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainLogRow {
  long long step = 0;
  LossBreakdown terms;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsReport> history;
  std::vector<TrainLogRow> log;
};

// Deterministic labeled/unlabeled batch composition: two cyclic queues,
// shuffled from the training rng at each epoch start (so a resumed run
// replays the same draw sequence) and on wrap-around.
class BatchSampler {
 public:
  BatchSampler(const GcdSplit& split, int batch_size, double labeled_fraction, Rng* rng);
  int steps_per_epoch() const { return steps_per_epoch_; }
  void begin_epoch();

  struct Batch {
    std::vector<int> ids;
    std::vector<std::uint8_t> labeled;
  };
  Batch next();

 private:
  int draw(std::vector<int>* queue, std::size_t* pos);

  std::vector<int> base_labeled_, base_unlabeled_;
  std::vector<int> labeled_queue_, unlabeled_queue_;
  std::size_t labeled_pos_ = 0, unlabeled_pos_ = 0;
  int per_batch_labeled_ = 0, batch_size_ = 0, steps_per_epoch_ = 0;
  Rng* rng_;
};

// Runs the optimization loop. When out_dir is nonempty the loss log, metric
// history and checkpoints are written there. resume continues a staged run.
TrainResult train(const TrainConfig& cfg, const SampleSet& data, const GcdSplit& split,
                  const std::string& out_dir = "",
                  const Checkpoint* resume = nullptr);

// Held-out predictions of the current model over the given sample ids.
std::vector<int> predict(const ModelState& model, const SampleSet& data,
                         const std::vector<int>& ids);

MetricsReport evaluate_model(const ModelState& model, const SampleSet& data,
                             const GcdSplit& split);

// Embeddings for the given ids, eval mode, chunked.
Matrix embed(const ModelState& model, const SampleSet& data, const std::vector<int>& ids);

struct SweepRow {
  double epsilon = 0.0;
  MetricsReport metrics;
};

// One full training run per epsilon value, shared seed and template config.
std::vector<SweepRow> sweep_epsilon(const TrainConfig& base, const SampleSet& data,
                                    const GcdSplit& split, const std::vector<double>& values,
                                    const std::string& out_dir = "");

struct AblationRow {
  std::string name;
  AblationFlags flags;
  MetricsReport metrics;
};

// The four constraint configurations: full, no orthogonality, no
// reconstruction, neither.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const SampleSet& data,
                                      const GcdSplit& split, const std::string& out_dir = "");

const char* to_string(HeadKind k);
const char* to_string(OptimizerKind k);
const char* to_string(LrSchedule k);
const char* to_string(EncoderKind k);

}  // namespace psgcd
