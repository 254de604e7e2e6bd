#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "psgcd/matrix.hpp"
#include "psgcd/rng.hpp"

namespace psgcd {

// Hyperspectral scene: reflectance indexed [row][col][band], label map with
// -1 marking unlabeled background pixels.
struct HsiCube {
  int height = 0, width = 0, bands = 0;
  std::vector<double> reflectance;
  std::vector<int> labels;

  double& at(int r, int c, int b) {
    return reflectance[(std::size_t(r) * width + c) * bands + b];
  }
  double at(int r, int c, int b) const {
    return reflectance[(std::size_t(r) * width + c) * bands + b];
  }
  int label(int r, int c) const { return labels[std::size_t(r) * width + c]; }
  std::size_t num_pixels() const { return std::size_t(height) * width; }
  int num_classes() const;
  void validate() const;
};

// Flat sample table: one row per sample, window stored channels-last
// ([h][w][band]); patch == 1 for plain spectra.
struct SampleSet {
  Matrix x;
  std::vector<int> labels;
  int patch = 1;
  int bands = 0;

  int size() const { return x.rows(); }
  int num_classes() const;
};

struct Patch {
  int center_row = 0;
  int center_col = 0;
  int size = 1;
  int bands = 0;
  std::vector<double> window;  // size*size*bands, channels-last
  int label = -1;
  bool labeled = false;
};

struct SynthSpec {
  int num_classes = 6;
  int ambient_dim = 64;
  int rank = 3;
  int samples_per_class = 200;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthResult {
  SampleSet samples;   // rows grouped by class
  Matrix true_bases;   // ambient_dim x (num_classes * rank), orthonormal
};

// Mutually orthogonal per-class bases (QR of one Gaussian draw), coefficients
// uniform on each subspace's unit sphere, isotropic noise of scale
// noise_sigma.
SynthResult generate_synthetic(const SynthSpec& spec);

// Semi-supervised split: the first num_labeled_classes class indices form the
// known set, a seeded label_ratio draw of each known class's train samples
// forms the labeled pool, everything else in the train partition is
// unlabeled. A stratified train_fraction split (largest-remainder rounding)
// holds out the test partition first.
struct GcdSplit {
  std::vector<int> labeled_classes;
  std::vector<int> novel_classes;
  std::vector<int> labeled_ids;
  std::vector<int> unlabeled_ids;
  std::vector<int> test_ids;
  double label_ratio = 0.5;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int num_classes = 0;

  int train_size() const { return int(labeled_ids.size() + unlabeled_ids.size()); }
};

GcdSplit make_split(const std::vector<int>& labels, int num_labeled_classes, double label_ratio,
                    std::uint64_t seed, double train_fraction = 0.8);

void save_split(const GcdSplit& split, const std::string& path);
GcdSplit load_split(const std::string& path);

// Binary cube container, magic "HSIC1": u32 height/width/bands, u8 dtype tag
// (4 = f32, 8 = f64), reflectance array, then the label map as i32. All
// fields little-endian.
void save_cube(const HsiCube& cube, const std::string& path, bool as_f32 = false);
HsiCube load_cube(const std::string& path);

// Plain CSV table: band values then label, one sample per row.
void save_table_csv(const SampleSet& table, const std::string& path);
SampleSet load_table_csv(const std::string& path);

// Patch extraction with mirror padding (reflection, border pixel not
// duplicated). patch_size must be odd.
Patch extract_patch(const HsiCube& cube, int row, int col, int patch_size);

// One patch per labeled pixel, ordered by (row, col).
SampleSet extract_patches(const HsiCube& cube, int patch_size);

struct AugmentConfig {
  double noise_rel = 0.01;  // per-band noise std relative to the band std
  double prob_rotate = 0.5;
  double prob_flip_h = 0.5;
  double prob_flip_v = 0.5;
};

// Spatially invariant augmentations: k*90 degree rotations, flips, additive
// Gaussian band noise. The center pixel never moves.
class Augmentor {
 public:
  Augmentor() = default;
  Augmentor(AugmentConfig cfg, std::vector<double> band_sigma);

  // window: flattened p x p x bands, channels-last.
  std::vector<double> apply(const std::vector<double>& window, int patch, int bands,
                            Rng& rng) const;
  const AugmentConfig& config() const { return cfg_; }

 private:
  AugmentConfig cfg_;
  std::vector<double> band_sigma_;
};

std::pair<std::vector<double>, std::vector<double>> augment_pair(const Patch& patch,
                                                                 const Augmentor& aug,
                                                                 std::uint64_t seed);

enum class NormalizeMode { kNone, kZScore, kMinMax };

struct BandStats {
  std::vector<double> mean, stdev, min, max;
};

// Per-band statistics over the center pixels of the given training rows.
BandStats compute_band_stats(const SampleSet& table, const std::vector<int>& train_ids);

// Applies the training statistics to every row (all window positions).
void normalize_bands(SampleSet& table, NormalizeMode mode, const BandStats& stats);

}  // namespace psgcd
