#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psgcd/matrix.hpp"
#include "psgcd/tape.hpp"

namespace psgcd {

struct LayerSpec {
  enum class Kind { kConv2d, kDense, kBatchnorm, kRelu, kFlatten };
  Kind kind = Kind::kDense;
  int kernel = 3, in_ch = 0, out_ch = 0, stride = 1;  // conv
  int in = 0, out = 0;                                // dense
  bool bias = true;  // disabled when batchnorm follows; beta takes its place
};

// Architecture of the feature map, ending in a row-normalized embedding of
// dimension embed_dim. Samples enter channels-last (patch x patch x bands).
struct ArchSpec {
  int patch = 1;
  int bands = 0;
  int embed_dim = 0;
  std::vector<LayerSpec> layers;

  void validate() const;  // throws ConfigError naming the offending layer
  int input_dim() const { return patch * patch * bands; }

  static ArchSpec identity(int bands, int patch = 1);
  static ArchSpec linear(int bands, int embed_dim, int patch = 1);
  static ArchSpec mlp(int bands, int hidden, int embed_dim);
  // conv(3x3)->bn->relu per channel entry, flatten, dense->relu->dense head.
  static ArchSpec cnn(int patch, int bands, const std::vector<int>& channels, int kernel,
                      int proj_hidden, int embed_dim);
};

struct EncoderParams {
  ArchSpec arch;
  std::vector<Matrix> weights;        // trainable tensors in layer order
  std::vector<std::string> names;     // aligned slot names ("dense0.w", ...)
  std::vector<Matrix> bn_run_mean;    // one 1 x channels row per batchnorm layer
  std::vector<Matrix> bn_run_var;
  std::uint64_t seed = 0;

  static EncoderParams init(const ArchSpec& arch, std::uint64_t seed);
};

enum class EncMode {
  kTrain,          // batch statistics, running statistics updated
  kTrainFrozen,    // batch statistics, no running-stat update (probing)
  kEval            // running statistics only
};

struct EncoderVars {
  std::vector<Var> weights;  // aligned with EncoderParams::weights
};

EncoderVars register_encoder(Tape& tape, const EncoderParams& params);

// Forward pass; the result is row-normalized. In kTrain mode the running
// batchnorm statistics inside params are updated (momentum 0.1).
Var encoder_forward(Tape& tape, EncoderParams& params, const EncoderVars& vars, Var x,
                    EncMode mode);

// Inference-mode forward without gradient bookkeeping.
Matrix encoder_forward_eval(const EncoderParams& params, const Matrix& x);

}  // namespace psgcd
