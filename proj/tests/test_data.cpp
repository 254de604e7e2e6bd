#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "psgcd/data.hpp"
#include "psgcd/errors.hpp"
#include "psgcd/kernels.hpp"
#include "psgcd/rng.hpp"

using namespace psgcd;
namespace k = psgcd::kernels;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/psgcd_test_") + name;
}

// Independent mirror-pad reference: build the fully padded plane first, then
// slice the window out of it.
std::vector<double> mirror_pad_oracle(const HsiCube& cube, int row, int col, int p) {
  const int half = p / 2;
  const int ph = cube.height + 2 * half, pw = cube.width + 2 * half;
  std::vector<double> padded(std::size_t(ph) * pw * cube.bands);
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c)
      for (int b = 0; b < cube.bands; ++b)
        padded[(std::size_t(r) * pw + c) * cube.bands + b] =
            cube.at(reflect(r - half, cube.height), reflect(c - half, cube.width), b);
  std::vector<double> window;
  for (int r = row; r < row + p; ++r)
    for (int c = col; c < col + p; ++c)
      for (int b = 0; b < cube.bands; ++b)
        window.push_back(padded[(std::size_t(r) * pw + c) * cube.bands + b]);
  return window;
}

HsiCube small_cube(int h, int w, int bands, std::uint64_t seed) {
  HsiCube cube;
  cube.height = h;
  cube.width = w;
  cube.bands = bands;
  cube.reflectance.resize(std::size_t(h) * w * bands);
  cube.labels.assign(std::size_t(h) * w, -1);
  Rng rng(seed);
  for (auto& v : cube.reflectance) v = rng.uniform(0.0, 1.0);
  return cube;
}

}  // namespace

TEST_CASE("synthetic generator: exact membership and orthogonality at zero noise") {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.ambient_dim = 24;
  spec.rank = 3;
  spec.samples_per_class = 10;
  spec.noise_sigma = 0.0;
  spec.seed = 3;
  SynthResult res = generate_synthetic(spec);
  CHECK(res.samples.size() == 40);
  CHECK(res.true_bases.rows() == 24);
  CHECK(res.true_bases.cols() == 12);

  for (int i = 0; i < res.samples.size(); ++i) {
    const int cls = res.samples.labels[std::size_t(i)];
    for (int kk = 0; kk < spec.num_classes; ++kk) {
      // projection coefficients onto block kk
      double proj_sq = 0.0;
      std::vector<double> coeff(3, 0.0);
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int d = 0; d < 24; ++d) dot += res.true_bases(d, kk * 3 + j) * res.samples.x(i, d);
        coeff[std::size_t(j)] = dot;
        proj_sq += dot * dot;
      }
      if (kk == cls) {
        // reconstruct and compare: residual must vanish
        double resid = 0.0;
        for (int d = 0; d < 24; ++d) {
          double back = 0.0;
          for (int j = 0; j < 3; ++j) back += res.true_bases(d, kk * 3 + j) * coeff[std::size_t(j)];
          const double diff = res.samples.x(i, d) - back;
          resid += diff * diff;
        }
        CHECK(std::sqrt(resid) <= 1e-10);
      } else {
        CHECK(std::sqrt(proj_sq) <= 1e-10);
      }
    }
  }
}

TEST_CASE("synthetic generator: nearest-true-subspace classification is perfect at sigma=0.05") {
  SynthSpec spec;  // the documented oracle configuration
  spec.num_classes = 6;
  spec.ambient_dim = 64;
  spec.rank = 3;
  spec.samples_per_class = 200;
  spec.noise_sigma = 0.05;
  spec.seed = 9;
  SynthResult res = generate_synthetic(spec);
  int correct = 0;
  for (int i = 0; i < res.samples.size(); ++i) {
    int best = -1;
    double best_score = -1.0;
    for (int kk = 0; kk < spec.num_classes; ++kk) {
      double score = 0.0;
      for (int j = 0; j < spec.rank; ++j) {
        double dot = 0.0;
        for (int d = 0; d < spec.ambient_dim; ++d)
          dot += res.true_bases(d, kk * spec.rank + j) * res.samples.x(i, d);
        score += dot * dot;
      }
      if (score > best_score) {
        best_score = score;
        best = kk;
      }
    }
    correct += best == res.samples.labels[std::size_t(i)];
  }
  CHECK(correct == res.samples.size());
}

TEST_CASE("synthetic generator is deterministic and validates its spec") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.ambient_dim = 12;
  spec.rank = 2;
  spec.samples_per_class = 5;
  spec.seed = 42;
  SynthResult a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(max_abs_diff(a.samples.x, b.samples.x) == 0.0);
  CHECK(max_abs_diff(a.true_bases, b.true_bases) == 0.0);

  SynthSpec bad = spec;
  bad.rank = 5;  // 15 > 12
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("split reproduces the documented train/test sizes on a Trento-shaped label map") {
  // class populations of the 600x166 scene with 6 annotated classes
  const std::vector<int> counts = {4034, 2903, 479, 9123, 10501, 3174};
  std::vector<int> labels(600 * 166, -1);
  int pos = 0;
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < counts[std::size_t(c)]; ++i) labels[std::size_t(pos++)] = c;

  GcdSplit split = make_split(labels, 4, 0.5, 1234, 0.8);
  CHECK(split.train_size() == 24171);
  CHECK(int(split.test_ids.size()) == 6043);
  CHECK(split.labeled_classes == std::vector<int>{0, 1, 2, 3});
  CHECK(split.novel_classes == std::vector<int>{4, 5});
}

TEST_CASE("split: per-class labeled counts follow round(ratio * class size)") {
  Rng rng(5);
  std::vector<int> labels;
  const std::vector<int> counts = {41, 30, 17, 55};
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < counts[std::size_t(c)]; ++i) labels.push_back(c);
  rng.shuffle(labels);

  GcdSplit split = make_split(labels, 3, 0.5, 77, 1.0);  // no test partition
  std::vector<int> labeled_per_class(4, 0), total_per_class(4, 0);
  for (int id : split.labeled_ids) labeled_per_class[std::size_t(labels[std::size_t(id)])]++;
  for (int v : labels) total_per_class[std::size_t(v)]++;
  for (int c = 0; c < 3; ++c)
    CHECK(labeled_per_class[std::size_t(c)] ==
          int(std::llround(0.5 * total_per_class[std::size_t(c)])));
  CHECK(labeled_per_class[3] == 0);  // novel class contributes nothing to D_l
}

TEST_CASE("split determinism, disjointness, coverage and no novel leakage") {
  Rng rng(6);
  std::vector<int> labels;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 40 + 10 * c; ++i) labels.push_back(c);
  rng.shuffle(labels);

  GcdSplit a = make_split(labels, 3, 0.4, 99, 0.8);
  GcdSplit b = make_split(labels, 3, 0.4, 99, 0.8);
  CHECK(a.labeled_ids == b.labeled_ids);
  CHECK(a.unlabeled_ids == b.unlabeled_ids);
  CHECK(a.test_ids == b.test_ids);
  GcdSplit c = make_split(labels, 3, 0.4, 100, 0.8);
  CHECK(a.labeled_ids != c.labeled_ids);

  std::set<int> seen;
  for (int id : a.labeled_ids) CHECK(seen.insert(id).second);
  for (int id : a.unlabeled_ids) CHECK(seen.insert(id).second);
  for (int id : a.test_ids) CHECK(seen.insert(id).second);
  CHECK(int(seen.size()) == int(labels.size()));

  for (int id : a.labeled_ids) CHECK(labels[std::size_t(id)] < 3);
  // unlabeled pool draws from both known and novel classes
  bool has_known = false, has_novel = false;
  for (int id : a.unlabeled_ids) {
    if (labels[std::size_t(id)] < 3) has_known = true;
    if (labels[std::size_t(id)] >= 3) has_novel = true;
  }
  CHECK(has_known);
  CHECK(has_novel);
}

TEST_CASE("split boundary: full supervision empties the unlabeled pool") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) labels.push_back(c);
  GcdSplit split = make_split(labels, 3, 1.0, 5, 1.0);
  CHECK(split.unlabeled_ids.empty());
  CHECK(int(split.labeled_ids.size()) == 60);
  CHECK(split.novel_classes.empty());
}

TEST_CASE("split errors: empty class is named") {
  std::vector<int> labels = {0, 0, 2, 2};  // class 1 missing
  try {
    make_split(labels, 2, 0.5, 1, 0.8);
    FAIL("expected SplitError");
  } catch (const SplitError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("split JSON round trip") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 25; ++i) labels.push_back(c);
  GcdSplit split = make_split(labels, 2, 0.5, 31, 0.8);
  const std::string path = temp_path("split.json");
  save_split(split, path);
  GcdSplit loaded = load_split(path);
  CHECK(loaded.labeled_ids == split.labeled_ids);
  CHECK(loaded.unlabeled_ids == split.unlabeled_ids);
  CHECK(loaded.test_ids == split.test_ids);
  CHECK(loaded.labeled_classes == split.labeled_classes);
  CHECK(loaded.seed == split.seed);
  std::remove(path.c_str());
}

TEST_CASE("cube container round trip is bit exact") {
  HsiCube cube = small_cube(7, 5, 3, 11);
  cube.labels[3] = 0;
  cube.labels[9] = 2;
  const std::string path = temp_path("cube.hsic");
  save_cube(cube, path);
  HsiCube loaded = load_cube(path);
  CHECK(loaded.height == 7);
  CHECK(loaded.width == 5);
  CHECK(loaded.bands == 3);
  CHECK(loaded.reflectance == cube.reflectance);
  CHECK(loaded.labels == cube.labels);

  // f32 payload round trips exactly when the data is f32-representable
  HsiCube cube32 = cube;
  for (auto& v : cube32.reflectance) v = double(float(v));
  save_cube(cube32, path, true);
  HsiCube loaded32 = load_cube(path);
  CHECK(loaded32.reflectance == cube32.reflectance);
  std::remove(path.c_str());
}

TEST_CASE("cube loader reports malformed input") {
  const std::string path = temp_path("bad.hsic");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("NOPE!", 1, 5, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_cube(path), IngestionError);
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("HSIC1", 1, 5, f);  // header truncated
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_cube(path), IngestionError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_cube(path), IoError);
}

TEST_CASE("csv table round trip") {
  SampleSet table;
  table.patch = 1;
  table.bands = 3;
  table.x = Matrix::from_rows({{0.25, -1.5, 3.75}, {1.0 / 3.0, 2e-7, -42.0}});
  table.labels = {0, 2};
  const std::string path = temp_path("table.csv");
  save_table_csv(table, path);
  SampleSet loaded = load_table_csv(path);
  CHECK(loaded.bands == 3);
  CHECK(loaded.labels == table.labels);
  CHECK(max_abs_diff(loaded.x, table.x) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("patches: p=1 equals the pixel spectrum") {
  HsiCube cube = small_cube(4, 4, 5, 21);
  cube.labels[5] = 1;  // (1,1)
  Patch p = extract_patch(cube, 1, 1, 1);
  CHECK(int(p.window.size()) == 5);
  for (int b = 0; b < 5; ++b) CHECK(p.window[std::size_t(b)] == cube.at(1, 1, b));
}

TEST_CASE("patches: interior window equals the direct slice") {
  HsiCube cube = small_cube(9, 9, 2, 22);
  Patch p = extract_patch(cube, 4, 4, 5);
  std::size_t idx = 0;
  for (int r = 2; r <= 6; ++r)
    for (int c = 2; c <= 6; ++c)
      for (int b = 0; b < 2; ++b) CHECK(p.window[idx++] == cube.at(r, c, b));
}

TEST_CASE("patches: corner windows match the mirror-pad oracle") {
  HsiCube cube = small_cube(6, 7, 3, 23);
  for (auto [r, c] : {std::pair{0, 0}, {0, 6}, {5, 0}, {5, 6}, {0, 3}, {2, 0}}) {
    Patch p = extract_patch(cube, r, c, 5);
    CHECK(p.window == mirror_pad_oracle(cube, r, c, 5));
  }
}

TEST_CASE("patches: even size rejected, stream ordered by (row, col)") {
  HsiCube cube = small_cube(3, 3, 2, 24);
  CHECK_THROWS_AS(extract_patch(cube, 0, 0, 4), ConfigError);
  CHECK_THROWS_AS(extract_patches(cube, 2), ConfigError);

  cube.labels = {0, -1, 1, -1, 2, -1, 1, -1, 0};
  SampleSet set = extract_patches(cube, 3);
  CHECK(set.size() == 5);
  CHECK(set.labels == std::vector<int>{0, 1, 2, 1, 0});
  // first row corresponds to pixel (0,0), second to (0,2)
  Patch p0 = extract_patch(cube, 0, 0, 3);
  for (std::size_t j = 0; j < p0.window.size(); ++j)
    CHECK(set.x(0, int(j)) == p0.window[j]);
}

TEST_CASE("augmentation: disabled transforms reproduce the input") {
  HsiCube cube = small_cube(5, 5, 4, 31);
  cube.labels[12] = 0;
  Patch p = extract_patch(cube, 2, 2, 3);
  Augmentor aug(AugmentConfig{0.0, 0.0, 0.0, 0.0}, std::vector<double>(4, 0.0));
  auto [a, b] = augment_pair(p, aug, 5);
  CHECK(a == p.window);
  CHECK(b == p.window);
}

TEST_CASE("augmentation: two 180-degree rotations restore the window") {
  HsiCube cube = small_cube(5, 5, 2, 32);
  Patch p = extract_patch(cube, 2, 2, 5);
  // rotate twice by 180 degrees via four 90-degree turns
  Augmentor aug({1.0, 0.0, 0.0, 0.0}, {});
  std::vector<double> w = p.window;
  // direct check of the involution through the dihedral helpers: apply with a
  // fixed rng sequence that always picks two quarter turns
  Rng rng(7);
  std::vector<double> once, twice;
  // draw until we hit k=2 twice in a row to exercise rot180 twice
  for (int attempts = 0; attempts < 1000; ++attempts) {
    Rng local(attempts);
    auto first = aug.apply(w, p.size, p.bands, local);
    auto second = aug.apply(first, p.size, p.bands, local);
    // recover which rotations were used by re-playing the rng
    Rng replay(attempts);
    bool rot_a = replay.uniform01() < 1.0;
    int ka = rot_a ? 1 + replay.uniform_int(3) : 0;
    bool rot_b = replay.uniform01() < 1.0;
    int kb = rot_b ? 1 + replay.uniform_int(3) : 0;
    if (ka == 2 && kb == 2) {
      CHECK(second == w);
      return;
    }
  }
  FAIL("no rng stream produced two consecutive 180-degree rotations");
}

TEST_CASE("augmentation: the center pixel survives every dihedral transform") {
  HsiCube cube = small_cube(7, 7, 3, 33);
  Patch p = extract_patch(cube, 3, 3, 5);
  const int center = (p.size / 2) * p.size + (p.size / 2);
  Augmentor aug({1.0, 1.0, 1.0, 0.0}, std::vector<double>(3, 0.0));
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    auto [a, b] = augment_pair(p, aug, seed);
    for (int band = 0; band < 3; ++band) {
      CHECK(a[std::size_t(center * 3 + band)] == p.window[std::size_t(center * 3 + band)]);
      CHECK(b[std::size_t(center * 3 + band)] == p.window[std::size_t(center * 3 + band)]);
    }
  }
}

TEST_CASE("augmentation is deterministic per seed and independent across views") {
  HsiCube cube = small_cube(5, 5, 2, 34);
  Patch p = extract_patch(cube, 2, 2, 3);
  Augmentor aug({0.5, 0.5, 0.5, 0.0}, std::vector<double>(2, 0.05));
  auto [a1, b1] = augment_pair(p, aug, 99);
  auto [a2, b2] = augment_pair(p, aug, 99);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
  auto [a3, b3] = augment_pair(p, aug, 100);
  CHECK(a1 != a3);
  (void)b3;
}

TEST_CASE("z-score normalization is shift invariant and recomputes to zero mean unit std") {
  Rng rng(41);
  SampleSet table;
  table.patch = 1;
  table.bands = 4;
  table.x = Matrix(50, 4);
  for (std::size_t i = 0; i < table.x.size(); ++i) table.x.data()[i] = rng.uniform(-3, 5);
  table.labels.assign(50, 0);
  std::vector<int> train_ids;
  for (int i = 0; i < 40; ++i) train_ids.push_back(i);

  SampleSet shifted = table;
  for (std::size_t i = 0; i < shifted.x.size(); ++i) shifted.x.data()[i] += 7.25;

  SampleSet a = table, b = shifted;
  normalize_bands(a, NormalizeMode::kZScore, compute_band_stats(a, train_ids));
  normalize_bands(b, NormalizeMode::kZScore, compute_band_stats(b, train_ids));
  CHECK(max_abs_diff(a.x, b.x) <= 1e-10);

  BandStats after = compute_band_stats(a, train_ids);
  for (int band = 0; band < 4; ++band) {
    CHECK(std::fabs(after.mean[std::size_t(band)]) <= 1e-10);
    CHECK(std::fabs(after.stdev[std::size_t(band)] - 1.0) <= 1e-10);
  }
}

TEST_CASE("min-max normalization closed form") {
  SampleSet table;
  table.patch = 1;
  table.bands = 1;
  table.x = Matrix::from_rows({{10.0}, {20.0}, {15.0}});
  table.labels = {0, 0, 0};
  normalize_bands(table, NormalizeMode::kMinMax, compute_band_stats(table, {0, 1, 2}));
  CHECK(table.x(0, 0) == doctest::Approx(0.0));
  CHECK(table.x(1, 0) == doctest::Approx(1.0));
  CHECK(table.x(2, 0) == doctest::Approx(0.5));
}

TEST_CASE("normalization names a degenerate band") {
  SampleSet table;
  table.patch = 1;
  table.bands = 2;
  table.x = Matrix::from_rows({{1.0, 5.0}, {2.0, 5.0}, {3.0, 5.0}});
  table.labels = {0, 0, 0};
  try {
    normalize_bands(table, NormalizeMode::kZScore, compute_band_stats(table, {0, 1, 2}));
    FAIL("expected DegenerateInputError");
  } catch (const DegenerateInputError& e) {
    CHECK(std::string(e.what()).find("band 1") != std::string::npos);
  }
}
