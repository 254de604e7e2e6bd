#include "psgcd/encoder.hpp"

#include <cmath>
#include <sstream>

#include "psgcd/errors.hpp"
#include "psgcd/kernels.hpp"
#include "psgcd/rng.hpp"

namespace psgcd {

namespace k = kernels;

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// Tracks sample geometry while walking the layer list.
struct Geom {
  bool spatial = false;
  int h = 1, w = 1, c = 0;
  int features() const { return h * w * c; }
};

Geom walk(const ArchSpec& arch, int upto) {
  Geom g;
  g.spatial = arch.patch > 1;
  g.h = arch.patch;
  g.w = arch.patch;
  g.c = arch.bands;
  for (int i = 0; i < upto; ++i) {
    const LayerSpec& l = arch.layers[std::size_t(i)];
    std::ostringstream at;
    at << "encoder layer " << i;
    switch (l.kind) {
      case LayerSpec::Kind::kConv2d: {
        if (!g.spatial && g.h * g.w == 1 && arch.patch == 1)
          throw ConfigError(at.str() + ": conv2d on flat input");
        if (l.in_ch != g.c)
          throw ConfigError(at.str() + ": conv2d expects " + std::to_string(l.in_ch) +
                            " channels, input has " + std::to_string(g.c));
        auto geom = k::ConvGeom::make(g.h, g.w, g.c, l.kernel, l.stride);
        g.h = geom.out_h;
        g.w = geom.out_w;
        g.c = l.out_ch;
        break;
      }
      case LayerSpec::Kind::kDense:
        if (g.spatial)
          throw ConfigError(at.str() + ": dense layer before flatten");
        if (l.in != g.features())
          throw ConfigError(at.str() + ": dense expects " + std::to_string(l.in) +
                            " features, input has " + std::to_string(g.features()));
        g.h = 1;
        g.w = 1;
        g.c = l.out;
        break;
      case LayerSpec::Kind::kBatchnorm:
      case LayerSpec::Kind::kRelu:
        break;
      case LayerSpec::Kind::kFlatten:
        g.c = g.features();
        g.h = 1;
        g.w = 1;
        g.spatial = false;
        break;
    }
  }
  return g;
}

}  // namespace

void ArchSpec::validate() const {
  if (patch < 1 || patch % 2 == 0)
    throw ConfigError("encoder: patch side must be odd and >= 1, got " + std::to_string(patch));
  if (bands < 1) throw ConfigError("encoder: bands must be >= 1");
  const Geom out = walk(*this, int(layers.size()));
  if (out.spatial)
    throw ConfigError("encoder: network ends while still spatial; add a flatten layer");
  if (out.features() != embed_dim)
    throw ConfigError("encoder: network produces " + std::to_string(out.features()) +
                      " features but embed_dim is " + std::to_string(embed_dim));
}

ArchSpec ArchSpec::identity(int bands, int patch) {
  ArchSpec a;
  a.patch = patch;
  a.bands = bands;
  a.embed_dim = patch * patch * bands;
  if (patch > 1) a.layers.push_back({LayerSpec::Kind::kFlatten});
  a.validate();
  return a;
}

ArchSpec ArchSpec::linear(int bands, int embed_dim, int patch) {
  ArchSpec a;
  a.patch = patch;
  a.bands = bands;
  a.embed_dim = embed_dim;
  if (patch > 1) a.layers.push_back({LayerSpec::Kind::kFlatten});
  LayerSpec d;
  d.kind = LayerSpec::Kind::kDense;
  d.in = patch * patch * bands;
  d.out = embed_dim;
  a.layers.push_back(d);
  a.validate();
  return a;
}

ArchSpec ArchSpec::mlp(int bands, int hidden, int embed_dim) {
  ArchSpec a;
  a.patch = 1;
  a.bands = bands;
  a.embed_dim = embed_dim;
  LayerSpec d1;
  d1.kind = LayerSpec::Kind::kDense;
  d1.in = bands;
  d1.out = hidden;
  d1.bias = false;  // the following batchnorm owns the shift
  a.layers.push_back(d1);
  a.layers.push_back({LayerSpec::Kind::kBatchnorm});
  a.layers.push_back({LayerSpec::Kind::kRelu});
  LayerSpec d2;
  d2.kind = LayerSpec::Kind::kDense;
  d2.in = hidden;
  d2.out = embed_dim;
  a.layers.push_back(d2);
  a.validate();
  return a;
}

ArchSpec ArchSpec::cnn(int patch, int bands, const std::vector<int>& channels, int kernel,
                       int proj_hidden, int embed_dim) {
  ArchSpec a;
  a.patch = patch;
  a.bands = bands;
  a.embed_dim = embed_dim;
  int in_ch = bands;
  for (int out_ch : channels) {
    LayerSpec c;
    c.kind = LayerSpec::Kind::kConv2d;
    c.kernel = kernel;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.stride = 1;
    c.bias = false;  // the following batchnorm owns the shift
    a.layers.push_back(c);
    a.layers.push_back({LayerSpec::Kind::kBatchnorm});
    a.layers.push_back({LayerSpec::Kind::kRelu});
    in_ch = out_ch;
  }
  a.layers.push_back({LayerSpec::Kind::kFlatten});
  LayerSpec d1;
  d1.kind = LayerSpec::Kind::kDense;
  d1.in = patch * patch * in_ch;
  d1.out = proj_hidden;
  a.layers.push_back(d1);
  a.layers.push_back({LayerSpec::Kind::kRelu});
  LayerSpec d2;
  d2.kind = LayerSpec::Kind::kDense;
  d2.in = proj_hidden;
  d2.out = embed_dim;
  a.layers.push_back(d2);
  a.validate();
  return a;
}

EncoderParams EncoderParams::init(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  EncoderParams p;
  p.arch = arch;
  p.seed = seed;
  Rng rng(derive_seed(seed, "encoder_init"));
  auto uniform_fill = [&rng](Matrix& m, double bound) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  for (int i = 0; i < int(arch.layers.size()); ++i) {
    const LayerSpec& l = arch.layers[std::size_t(i)];
    const std::string tag = std::to_string(i);
    switch (l.kind) {
      case LayerSpec::Kind::kConv2d: {
        const int fan_in = l.kernel * l.kernel * l.in_ch;
        Matrix w(fan_in, l.out_ch);
        uniform_fill(w, 1.0 / std::sqrt(double(fan_in)));
        p.weights.push_back(std::move(w));
        p.names.push_back("conv" + tag + ".w");
        if (l.bias) {
          p.weights.push_back(Matrix(1, l.out_ch));
          p.names.push_back("conv" + tag + ".b");
        }
        break;
      }
      case LayerSpec::Kind::kDense: {
        Matrix w(l.in, l.out);
        uniform_fill(w, 1.0 / std::sqrt(double(l.in)));
        p.weights.push_back(std::move(w));
        p.names.push_back("dense" + tag + ".w");
        if (l.bias) {
          p.weights.push_back(Matrix(1, l.out));
          p.names.push_back("dense" + tag + ".b");
        }
        break;
      }
      case LayerSpec::Kind::kBatchnorm: {
        const int ch = walk(arch, i).c;
        p.weights.push_back(Matrix(1, ch, 1.0));
        p.names.push_back("bn" + tag + ".gamma");
        p.weights.push_back(Matrix(1, ch, 0.0));
        p.names.push_back("bn" + tag + ".beta");
        p.bn_run_mean.push_back(Matrix(1, ch, 0.0));
        p.bn_run_var.push_back(Matrix(1, ch, 1.0));
        break;
      }
      case LayerSpec::Kind::kRelu:
      case LayerSpec::Kind::kFlatten:
        break;
    }
  }
  return p;
}

EncoderVars register_encoder(Tape& tape, const EncoderParams& params) {
  EncoderVars vars;
  for (const Matrix& w : params.weights) vars.weights.push_back(tape.param(w));
  return vars;
}

Var encoder_forward(Tape& tape, EncoderParams& params, const EncoderVars& vars, Var x,
                    EncMode mode) {
  const ArchSpec& arch = params.arch;
  if (tape.value(x).cols() != arch.input_dim())
    throw DimensionError("encoder: input " + tape.value(x).shape_str() + " does not match " +
                         std::to_string(arch.input_dim()) + " features (layer 0)");
  Var h = x;
  int slot = 0;
  int bn_index = 0;
  Geom g;
  g.spatial = arch.patch > 1;
  g.h = arch.patch;
  g.w = arch.patch;
  g.c = arch.bands;

  for (int i = 0; i < int(arch.layers.size()); ++i) {
    const LayerSpec& l = arch.layers[std::size_t(i)];
    switch (l.kind) {
      case LayerSpec::Kind::kConv2d: {
        auto geom = k::ConvGeom::make(g.h, g.w, g.c, l.kernel, l.stride);
        const int n = tape.value(h).rows();
        Var cols = tape.im2col(h, geom);
        Var conv = tape.matmul(cols, vars.weights[std::size_t(slot)]);
        ++slot;
        if (l.bias) {
          conv = tape.add_row_broadcast(conv, vars.weights[std::size_t(slot)]);
          ++slot;
        }
        h = tape.reshape(conv, n, geom.out_positions() * l.out_ch);
        g.h = geom.out_h;
        g.w = geom.out_w;
        g.c = l.out_ch;
        break;
      }
      case LayerSpec::Kind::kDense:
        h = tape.matmul(h, vars.weights[std::size_t(slot)]);
        ++slot;
        if (l.bias) {
          h = tape.add_row_broadcast(h, vars.weights[std::size_t(slot)]);
          ++slot;
        }
        g.h = 1;
        g.w = 1;
        g.c = l.out;
        break;
      case LayerSpec::Kind::kBatchnorm: {
        Var gamma = vars.weights[std::size_t(slot)];
        Var beta = vars.weights[std::size_t(slot) + 1];
        if (mode == EncMode::kEval) {
          h = tape.batchnorm_eval(h, g.c, gamma, beta, params.bn_run_mean[std::size_t(bn_index)],
                                  params.bn_run_var[std::size_t(bn_index)], kBnEps);
        } else {
          std::vector<double> mean, var;
          h = tape.batchnorm_train(h, g.c, gamma, beta, kBnEps,
                                   mode == EncMode::kTrain ? &mean : nullptr,
                                   mode == EncMode::kTrain ? &var : nullptr);
          if (mode == EncMode::kTrain) {
            Matrix& rm = params.bn_run_mean[std::size_t(bn_index)];
            Matrix& rv = params.bn_run_var[std::size_t(bn_index)];
            for (int c = 0; c < g.c; ++c) {
              rm(0, c) = (1.0 - kBnMomentum) * rm(0, c) + kBnMomentum * mean[std::size_t(c)];
              rv(0, c) = (1.0 - kBnMomentum) * rv(0, c) + kBnMomentum * var[std::size_t(c)];
            }
          }
        }
        slot += 2;
        ++bn_index;
        break;
      }
      case LayerSpec::Kind::kRelu:
        h = tape.relu(h);
        break;
      case LayerSpec::Kind::kFlatten:
        g.c = g.features();
        g.h = 1;
        g.w = 1;
        g.spatial = false;
        break;
    }
  }
  return tape.row_l2_normalize(h);
}

Matrix encoder_forward_eval(const EncoderParams& params, const Matrix& x) {
  Tape tape;
  EncoderVars vars = register_encoder(tape, params);
  // kEval never mutates the running statistics
  Var out = encoder_forward(tape, const_cast<EncoderParams&>(params), vars, tape.input(x),
                            EncMode::kEval);
  return tape.value(out);
}

}  // namespace psgcd
