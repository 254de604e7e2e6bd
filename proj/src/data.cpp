#include "psgcd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "psgcd/errors.hpp"
#include "psgcd/heads.hpp"
#include "psgcd/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "cube container IO assumes a little-endian host");

namespace psgcd {

namespace k = kernels;
using nlohmann::json;

int HsiCube::num_classes() const {
  int mx = -1;
  for (int v : labels) mx = std::max(mx, v);
  return mx + 1;
}

void HsiCube::validate() const {
  if (height < 1 || width < 1 || bands < 1)
    throw ConfigError("cube: dimensions must be positive");
  if (reflectance.size() != num_pixels() * std::size_t(bands))
    throw DimensionError("cube: reflectance size does not match dimensions");
  if (labels.size() != num_pixels())
    throw DimensionError("cube: label map size does not match dimensions");
  for (double v : reflectance)
    if (!std::isfinite(v)) throw DegenerateInputError("cube: non-finite reflectance value");
  for (int v : labels)
    if (v < -1) throw ConfigError("cube: label values must be >= -1");
}

int SampleSet::num_classes() const {
  int mx = -1;
  for (int v : labels) mx = std::max(mx, v);
  return mx + 1;
}

void SynthSpec::validate() const {
  if (num_classes < 1 || rank < 1 || samples_per_class < 1)
    throw ConfigError("synth: classes, rank and samples_per_class must be >= 1");
  if (rank * num_classes > ambient_dim)
    throw ConfigError("synth: rank*classes = " + std::to_string(rank * num_classes) +
                      " exceeds ambient dim " + std::to_string(ambient_dim));
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
}

SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth"));
  const int d = spec.ambient_dim, K = spec.num_classes, r = spec.rank;

  Matrix draw(d, K * r);
  for (std::size_t i = 0; i < draw.size(); ++i) draw.data()[i] = rng.normal();
  Matrix bases = orthonormal_columns(draw);

  SynthResult out;
  out.true_bases = bases;
  const int n = K * spec.samples_per_class;
  out.samples.x = Matrix(n, d);
  out.samples.labels.assign(std::size_t(n), 0);
  out.samples.patch = 1;
  out.samples.bands = d;

  int row = 0;
  std::vector<double> coeff(std::size_t(r), 0.0);
  for (int cls = 0; cls < K; ++cls) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (int j = 0; j < r; ++j) {
          coeff[std::size_t(j)] = rng.normal();
          norm += coeff[std::size_t(j)] * coeff[std::size_t(j)];
        }
        norm = std::sqrt(norm);
      } while (norm < 1e-12);
      for (int j = 0; j < r; ++j) coeff[std::size_t(j)] /= norm;
      for (int i = 0; i < d; ++i) {
        double v = 0.0;
        for (int j = 0; j < r; ++j) v += bases(i, cls * r + j) * coeff[std::size_t(j)];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        out.samples.x(row, i) = v;
      }
      out.samples.labels[std::size_t(row)] = cls;
    }
  }
  return out;
}

namespace {

// Largest-remainder apportionment of round(fraction * total) across classes.
std::vector<int> stratified_counts(const std::vector<int>& class_sizes, double fraction) {
  const int num = int(class_sizes.size());
  long long total = 0;
  for (int n : class_sizes) total += n;
  const long long target = std::llround(fraction * double(total));
  std::vector<int> counts(std::size_t(num), 0);
  std::vector<std::pair<double, int>> remainders;
  long long assigned = 0;
  for (int c = 0; c < num; ++c) {
    const double exact = fraction * class_sizes[std::size_t(c)];
    counts[std::size_t(c)] = int(std::floor(exact));
    assigned += counts[std::size_t(c)];
    remainders.push_back({exact - std::floor(exact), c});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  long long leftover = target - assigned;
  for (int i = 0; i < int(remainders.size()) && leftover > 0; ++i, --leftover)
    counts[std::size_t(remainders[std::size_t(i)].second)] += 1;
  return counts;
}

}  // namespace

GcdSplit make_split(const std::vector<int>& labels, int num_labeled_classes, double label_ratio,
                    std::uint64_t seed, double train_fraction) {
  int num_classes = 0;
  for (int v : labels) num_classes = std::max(num_classes, v + 1);
  if (num_classes < 2) throw SplitError("split: need at least 2 classes");
  if (num_labeled_classes < 1 || num_labeled_classes > num_classes)
    throw ConfigError("split: num_labeled_classes must lie in [1, " +
                      std::to_string(num_classes) + "]");
  if (!(label_ratio > 0.0 && label_ratio <= 1.0))
    throw ConfigError("split: label_ratio must lie in (0, 1]");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("split: train_fraction must lie in (0, 1]");

  std::vector<std::vector<int>> per_class(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < int(labels.size()); ++i) {
    const int y = labels[std::size_t(i)];
    if (y >= 0) per_class[std::size_t(y)].push_back(i);
  }
  std::vector<int> class_sizes;
  for (int c = 0; c < num_classes; ++c) {
    if (per_class[std::size_t(c)].empty())
      throw SplitError("split: class " + std::to_string(c) + " has zero samples");
    class_sizes.push_back(int(per_class[std::size_t(c)].size()));
  }

  GcdSplit split;
  split.label_ratio = label_ratio;
  split.train_fraction = train_fraction;
  split.seed = seed;
  split.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c)
    (c < num_labeled_classes ? split.labeled_classes : split.novel_classes).push_back(c);

  // Held-out test partition first, stratified per class.
  Rng test_rng(derive_seed(seed, "train_test_split"));
  const std::vector<int> train_counts = stratified_counts(class_sizes, train_fraction);
  std::vector<std::vector<int>> train_per_class(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> ids = per_class[std::size_t(c)];
    test_rng.shuffle(ids);
    const int n_train = train_counts[std::size_t(c)];
    for (int i = 0; i < int(ids.size()); ++i) {
      if (i < n_train)
        train_per_class[std::size_t(c)].push_back(ids[std::size_t(i)]);
      else
        split.test_ids.push_back(ids[std::size_t(i)]);
    }
  }

  // Labeled subset of each known class's train samples.
  Rng label_rng(derive_seed(seed, "label_draw"));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> ids = train_per_class[std::size_t(c)];
    if (c < num_labeled_classes) {
      label_rng.shuffle(ids);
      const int n_labeled = int(std::llround(label_ratio * double(ids.size())));
      for (int i = 0; i < int(ids.size()); ++i)
        (i < n_labeled ? split.labeled_ids : split.unlabeled_ids).push_back(ids[std::size_t(i)]);
    } else {
      for (int id : ids) split.unlabeled_ids.push_back(id);
    }
  }
  std::sort(split.labeled_ids.begin(), split.labeled_ids.end());
  std::sort(split.unlabeled_ids.begin(), split.unlabeled_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

void save_split(const GcdSplit& split, const std::string& path) {
  json j;
  j["labeled_classes"] = split.labeled_classes;
  j["novel_classes"] = split.novel_classes;
  j["labeled_ids"] = split.labeled_ids;
  j["unlabeled_ids"] = split.unlabeled_ids;
  j["test_ids"] = split.test_ids;
  j["label_ratio"] = split.label_ratio;
  j["train_fraction"] = split.train_fraction;
  j["seed"] = split.seed;
  j["num_classes"] = split.num_classes;
  std::ofstream out(path);
  if (!out) throw IoError("split: cannot write " + path);
  out << j.dump(2) << "\n";
}

GcdSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("split: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestionError("split: malformed JSON in " + path + ": " + e.what());
  }
  GcdSplit split;
  try {
    split.labeled_classes = j.at("labeled_classes").get<std::vector<int>>();
    split.novel_classes = j.at("novel_classes").get<std::vector<int>>();
    split.labeled_ids = j.at("labeled_ids").get<std::vector<int>>();
    split.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<int>>();
    split.test_ids = j.at("test_ids").get<std::vector<int>>();
    split.label_ratio = j.at("label_ratio").get<double>();
    split.train_fraction = j.at("train_fraction").get<double>();
    split.seed = j.at("seed").get<std::uint64_t>();
    split.num_classes = j.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw IngestionError("split: missing field in " + path + ": " + e.what());
  }
  return split;
}

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const std::string& path,
                const char* field) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(in.gcount()) != n)
    throw IngestionError("cube: " + path + ": truncated while reading " + field + " at offset " +
                         std::to_string(std::size_t(in.tellg()) - std::size_t(in.gcount())));
}

}  // namespace

void save_cube(const HsiCube& cube, const std::string& path, bool as_f32) {
  cube.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cube: cannot write " + path);
  write_bytes(out, "HSIC1", 5);
  const std::uint32_t h = std::uint32_t(cube.height), w = std::uint32_t(cube.width),
                      b = std::uint32_t(cube.bands);
  write_bytes(out, &h, 4);
  write_bytes(out, &w, 4);
  write_bytes(out, &b, 4);
  const std::uint8_t dtype = as_f32 ? 4 : 8;
  write_bytes(out, &dtype, 1);
  if (as_f32) {
    std::vector<float> buf(cube.reflectance.begin(), cube.reflectance.end());
    write_bytes(out, buf.data(), buf.size() * 4);
  } else {
    write_bytes(out, cube.reflectance.data(), cube.reflectance.size() * 8);
  }
  std::vector<std::int32_t> lab(cube.labels.begin(), cube.labels.end());
  write_bytes(out, lab.data(), lab.size() * 4);
  if (!out) throw IoError("cube: write failed for " + path);
}

HsiCube load_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cube: cannot read " + path);
  char magic[5];
  read_bytes(in, magic, 5, path, "magic");
  if (std::memcmp(magic, "HSIC1", 5) != 0)
    throw IngestionError("cube: " + path + ": bad magic at offset 0, expected \"HSIC1\"");
  std::uint32_t h = 0, w = 0, b = 0;
  read_bytes(in, &h, 4, path, "height");
  read_bytes(in, &w, 4, path, "width");
  read_bytes(in, &b, 4, path, "bands");
  std::uint8_t dtype = 0;
  read_bytes(in, &dtype, 1, path, "dtype");
  if (dtype != 4 && dtype != 8)
    throw IngestionError("cube: " + path + ": unknown dtype tag " + std::to_string(int(dtype)) +
                         ", expected 4 (f32) or 8 (f64)");
  if (h == 0 || w == 0 || b == 0)
    throw IngestionError("cube: " + path + ": zero dimension in header");
  HsiCube cube;
  cube.height = int(h);
  cube.width = int(w);
  cube.bands = int(b);
  const std::size_t n = std::size_t(h) * w * b;
  cube.reflectance.resize(n);
  if (dtype == 4) {
    std::vector<float> buf(n);
    read_bytes(in, buf.data(), n * 4, path, "reflectance");
    for (std::size_t i = 0; i < n; ++i) cube.reflectance[i] = double(buf[i]);
  } else {
    read_bytes(in, cube.reflectance.data(), n * 8, path, "reflectance");
  }
  std::vector<std::int32_t> lab(std::size_t(h) * w);
  read_bytes(in, lab.data(), lab.size() * 4, path, "labels");
  cube.labels.assign(lab.begin(), lab.end());
  cube.validate();
  return cube;
}

void save_table_csv(const SampleSet& table, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("table: cannot write " + path);
  for (int i = 0; i < table.size(); ++i) {
    for (int j = 0; j < table.x.cols(); ++j) std::fprintf(f, "%.17g,", table.x(i, j));
    std::fprintf(f, "%d\n", table.labels[std::size_t(i)]);
  }
  std::fclose(f);
}

SampleSet load_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("table: cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw IngestionError("table: " + path + ": line " + std::to_string(line_no) +
                             ": cannot parse value \"" + cell + "\"");
      }
    }
    if (vals.size() < 2)
      throw IngestionError("table: " + path + ": line " + std::to_string(line_no) +
                           ": need at least one band value and a label");
    if (width == 0) width = vals.size();
    if (vals.size() != width)
      throw IngestionError("table: " + path + ": line " + std::to_string(line_no) + ": expected " +
                           std::to_string(width) + " fields, got " + std::to_string(vals.size()));
    labels.push_back(int(std::llround(vals.back())));
    vals.pop_back();
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IngestionError("table: " + path + ": no samples");
  SampleSet table;
  table.patch = 1;
  table.bands = int(width) - 1;
  table.x = Matrix(int(rows.size()), table.bands);
  for (int i = 0; i < table.size(); ++i)
    for (int j = 0; j < table.bands; ++j) table.x(i, j) = rows[std::size_t(i)][std::size_t(j)];
  table.labels = std::move(labels);
  return table;
}

namespace {

// Reflect an index into [0, n) without duplicating the border pixel.
int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace

Patch extract_patch(const HsiCube& cube, int row, int col, int patch_size) {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw ConfigError("extract_patch: patch size must be odd, got " + std::to_string(patch_size));
  Patch p;
  p.center_row = row;
  p.center_col = col;
  p.size = patch_size;
  p.bands = cube.bands;
  p.label = cube.label(row, col);
  p.labeled = p.label >= 0;
  p.window.resize(std::size_t(patch_size) * patch_size * cube.bands);
  const int half = patch_size / 2;
  std::size_t idx = 0;
  for (int dr = -half; dr <= half; ++dr) {
    const int r = mirror_index(row + dr, cube.height);
    for (int dc = -half; dc <= half; ++dc) {
      const int c = mirror_index(col + dc, cube.width);
      for (int b = 0; b < cube.bands; ++b) p.window[idx++] = cube.at(r, c, b);
    }
  }
  return p;
}

SampleSet extract_patches(const HsiCube& cube, int patch_size) {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw ConfigError("extract_patches: patch size must be odd, got " +
                      std::to_string(patch_size));
  std::vector<std::pair<int, int>> centers;
  for (int r = 0; r < cube.height; ++r)
    for (int c = 0; c < cube.width; ++c)
      if (cube.label(r, c) >= 0) centers.push_back({r, c});

  SampleSet out;
  out.patch = patch_size;
  out.bands = cube.bands;
  out.x = Matrix(int(centers.size()), patch_size * patch_size * cube.bands);
  out.labels.assign(centers.size(), -1);
#pragma omp parallel for schedule(static) if (centers.size() > 256)
  for (int i = 0; i < int(centers.size()); ++i) {
    const auto [r, c] = centers[std::size_t(i)];
    Patch p = extract_patch(cube, r, c, patch_size);
    std::memcpy(out.x.row(i), p.window.data(), p.window.size() * sizeof(double));
    out.labels[std::size_t(i)] = p.label;
  }
  return out;
}

Augmentor::Augmentor(AugmentConfig cfg, std::vector<double> band_sigma)
    : cfg_(cfg), band_sigma_(std::move(band_sigma)) {}

namespace {

// 90-degree clockwise rotation of a channels-last square window.
std::vector<double> rotate90(const std::vector<double>& w, int p, int bands) {
  std::vector<double> out(w.size());
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c)
      for (int b = 0; b < bands; ++b)
        out[(std::size_t(r) * p + c) * bands + b] =
            w[(std::size_t(p - 1 - c) * p + r) * bands + b];
  return out;
}

std::vector<double> flip_h(const std::vector<double>& w, int p, int bands) {
  std::vector<double> out(w.size());
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c)
      for (int b = 0; b < bands; ++b)
        out[(std::size_t(r) * p + c) * bands + b] =
            w[(std::size_t(r) * p + (p - 1 - c)) * bands + b];
  return out;
}

std::vector<double> flip_v(const std::vector<double>& w, int p, int bands) {
  std::vector<double> out(w.size());
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c)
      for (int b = 0; b < bands; ++b)
        out[(std::size_t(r) * p + c) * bands + b] =
            w[(std::size_t(p - 1 - r) * p + c) * bands + b];
  return out;
}

}  // namespace

std::vector<double> Augmentor::apply(const std::vector<double>& window, int patch, int bands,
                                     Rng& rng) const {
  std::vector<double> out = window;
  if (cfg_.prob_rotate > 0.0 && rng.uniform01() < cfg_.prob_rotate) {
    const int quarter_turns = 1 + rng.uniform_int(3);
    for (int t = 0; t < quarter_turns; ++t) out = rotate90(out, patch, bands);
  }
  if (cfg_.prob_flip_h > 0.0 && rng.uniform01() < cfg_.prob_flip_h) out = flip_h(out, patch, bands);
  if (cfg_.prob_flip_v > 0.0 && rng.uniform01() < cfg_.prob_flip_v) out = flip_v(out, patch, bands);
  if (!band_sigma_.empty()) {
    bool any = false;
    for (double s : band_sigma_)
      if (s > 0.0) any = true;
    if (any) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = band_sigma_[i % band_sigma_.size()];
        if (s > 0.0) out[i] += s * rng.normal();
      }
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> augment_pair(const Patch& patch,
                                                                 const Augmentor& aug,
                                                                 std::uint64_t seed) {
  if (patch.size < 1) throw ConfigError("augment_pair: empty patch");
  Rng rng(derive_seed(seed, "augment_pair"));
  auto a = aug.apply(patch.window, patch.size, patch.bands, rng);
  auto b = aug.apply(patch.window, patch.size, patch.bands, rng);
  return {std::move(a), std::move(b)};
}

BandStats compute_band_stats(const SampleSet& table, const std::vector<int>& train_ids) {
  const int bands = table.bands;
  if (train_ids.empty()) throw DegenerateInputError("band stats: no training samples");
  BandStats st;
  st.mean.assign(std::size_t(bands), 0.0);
  st.stdev.assign(std::size_t(bands), 0.0);
  st.min.assign(std::size_t(bands), std::numeric_limits<double>::infinity());
  st.max.assign(std::size_t(bands), -std::numeric_limits<double>::infinity());
  // statistics come from the center pixel of each training window
  const int center = (table.patch / 2) * table.patch + (table.patch / 2);
  const int offset = center * bands;
  for (int id : train_ids) {
    const double* row = table.x.row(id);
    for (int b = 0; b < bands; ++b) {
      const double v = row[offset + b];
      st.mean[std::size_t(b)] += v;
      st.min[std::size_t(b)] = std::min(st.min[std::size_t(b)], v);
      st.max[std::size_t(b)] = std::max(st.max[std::size_t(b)], v);
    }
  }
  const double inv = 1.0 / double(train_ids.size());
  for (int b = 0; b < bands; ++b) st.mean[std::size_t(b)] *= inv;
  for (int id : train_ids) {
    const double* row = table.x.row(id);
    for (int b = 0; b < bands; ++b) {
      const double d = row[offset + b] - st.mean[std::size_t(b)];
      st.stdev[std::size_t(b)] += d * d;
    }
  }
  for (int b = 0; b < bands; ++b) st.stdev[std::size_t(b)] = std::sqrt(st.stdev[std::size_t(b)] * inv);
  return st;
}

void normalize_bands(SampleSet& table, NormalizeMode mode, const BandStats& stats) {
  if (mode == NormalizeMode::kNone) return;
  const int bands = table.bands;
  if (int(stats.mean.size()) != bands)
    throw DimensionError("normalize: stats computed for " + std::to_string(stats.mean.size()) +
                         " bands, table has " + std::to_string(bands));
  if (mode == NormalizeMode::kZScore) {
    for (int b = 0; b < bands; ++b)
      if (stats.stdev[std::size_t(b)] < 1e-12)
        throw DegenerateInputError("normalize: band " + std::to_string(b) +
                                   " has zero variance on the training samples");
    for (int i = 0; i < table.size(); ++i) {
      double* row = table.x.row(i);
      for (int j = 0; j < table.x.cols(); ++j) {
        const int b = j % bands;
        row[j] = (row[j] - stats.mean[std::size_t(b)]) / stats.stdev[std::size_t(b)];
      }
    }
  } else {
    for (int b = 0; b < bands; ++b)
      if (stats.max[std::size_t(b)] - stats.min[std::size_t(b)] < 1e-12)
        throw DegenerateInputError("normalize: band " + std::to_string(b) +
                                   " has a degenerate min-max range on the training samples");
    for (int i = 0; i < table.size(); ++i) {
      double* row = table.x.row(i);
      for (int j = 0; j < table.x.cols(); ++j) {
        const int b = j % bands;
        row[j] = (row[j] - stats.min[std::size_t(b)]) /
                 (stats.max[std::size_t(b)] - stats.min[std::size_t(b)]);
      }
    }
  }
}

}  // namespace psgcd
