#include "psgcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"
#include "psgcd/errors.hpp"
#include "psgcd/rng.hpp"

namespace psgcd {

using nlohmann::json;

namespace {

// Shortest-augmenting-path assignment (minimizing), O(n^3). cost is square.
// Returns row -> col.
std::vector<int> solve_min_cost(const std::vector<std::vector<double>>& cost) {
  const int n = int(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(std::size_t(n) + 1), v(std::size_t(n) + 1);
  std::vector<int> match(std::size_t(n) + 1, 0);  // col (1-based) -> row (1-based)
  std::vector<int> way(std::size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(std::size_t(n) + 1, inf);
    std::vector<char> used(std::size_t(n) + 1, 0);
    do {
      used[std::size_t(j0)] = 1;
      const int i0 = match[std::size_t(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur =
            cost[std::size_t(i0) - 1][std::size_t(j) - 1] - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(match[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[std::size_t(j0)] != 0);
    do {
      const int j1 = way[std::size_t(j0)];
      match[std::size_t(j0)] = match[std::size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(std::size_t(n), -1);
  for (int j = 1; j <= n; ++j)
    if (match[std::size_t(j)] > 0) row_to_col[std::size_t(match[std::size_t(j)]) - 1] = j - 1;
  return row_to_col;
}

long long best_total(const Matrix& counts, const std::vector<int>& fixed_cluster_to_class) {
  const int n = counts.rows();
  std::vector<int> free_rows, free_cols;
  std::vector<char> col_used(std::size_t(n), 0);
  long long fixed_sum = 0;
  for (int r = 0; r < n; ++r) {
    const int c = fixed_cluster_to_class[std::size_t(r)];
    if (c >= 0) {
      fixed_sum += (long long)std::llround(counts(r, c));
      col_used[std::size_t(c)] = 1;
    } else {
      free_rows.push_back(r);
    }
  }
  for (int c = 0; c < n; ++c)
    if (!col_used[std::size_t(c)]) free_cols.push_back(c);
  if (free_rows.empty()) return fixed_sum;

  double maxval = 0.0;
  for (int r : free_rows)
    for (int c : free_cols) maxval = std::max(maxval, counts(r, c));
  std::vector<std::vector<double>> cost(free_rows.size(),
                                        std::vector<double>(free_cols.size(), 0.0));
  for (std::size_t i = 0; i < free_rows.size(); ++i)
    for (std::size_t j = 0; j < free_cols.size(); ++j)
      cost[i][j] = maxval - counts(free_rows[i], free_cols[j]);
  std::vector<int> match = solve_min_cost(cost);
  long long total = fixed_sum;
  for (std::size_t i = 0; i < free_rows.size(); ++i)
    total += (long long)std::llround(counts(free_rows[i], free_cols[std::size_t(match[i])]));
  return total;
}

}  // namespace

AssignmentResult hungarian_match(const Matrix& confusion) {
  if (confusion.rows() != confusion.cols())
    throw DimensionError("hungarian_match: matrix must be square, got " + confusion.shape_str());
  const int n = confusion.rows();
  if (n == 0) throw DimensionError("hungarian_match: empty matrix");
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (confusion(r, c) < 0.0)
        throw DegenerateInputError("hungarian_match: negative count at (" + std::to_string(r) +
                                   "," + std::to_string(c) + ")");

  AssignmentResult result;
  result.cluster_to_class.assign(std::size_t(n), -1);
  const long long optimum = best_total(confusion, result.cluster_to_class);

  // Lexicographic refinement: lock each cluster to the lowest class index
  // that still admits an optimal completion.
  std::vector<char> class_taken(std::size_t(n), 0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (class_taken[std::size_t(c)]) continue;
      result.cluster_to_class[std::size_t(r)] = c;
      if (best_total(confusion, result.cluster_to_class) == optimum) {
        class_taken[std::size_t(c)] = 1;
        break;
      }
      result.cluster_to_class[std::size_t(r)] = -1;
    }
  }
  result.matched = optimum;
  return result;
}

MetricsReport gcd_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth,
                           const std::vector<int>& labeled_classes, int num_classes) {
  if (predictions.size() != truth.size())
    throw DimensionError("gcd_accuracy: prediction/truth length mismatch");
  if (predictions.empty()) throw DegenerateInputError("gcd_accuracy: no samples");
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] >= num_classes)
      throw ProtocolError("gcd_accuracy: cluster id " + std::to_string(predictions[i]) +
                          " outside the fixed K = " + std::to_string(num_classes) +
                          " contract at sample " + std::to_string(i));
    if (truth[i] < 0 || truth[i] >= num_classes)
      throw ProtocolError("gcd_accuracy: class id " + std::to_string(truth[i]) +
                          " outside the fixed K = " + std::to_string(num_classes) +
                          " contract at sample " + std::to_string(i));
  }

  Matrix counts(num_classes, num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i)
    counts(predictions[i], truth[i]) += 1.0;
  AssignmentResult assignment = hungarian_match(counts);

  std::set<int> old_set(labeled_classes.begin(), labeled_classes.end());
  MetricsReport rep;
  rep.cluster_to_class = assignment.cluster_to_class;
  rep.confusion.assign(std::size_t(num_classes), std::vector<long long>(std::size_t(num_classes), 0));
  for (int r = 0; r < num_classes; ++r)
    for (int c = 0; c < num_classes; ++c)
      rep.confusion[std::size_t(r)][std::size_t(c)] = (long long)std::llround(counts(r, c));

  std::vector<long long> class_hits(std::size_t(num_classes), 0),
      class_counts(std::size_t(num_classes), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int mapped = assignment.cluster_to_class[std::size_t(predictions[i])];
    const bool hit = mapped == truth[i];
    const bool old_class = old_set.count(truth[i]) > 0;
    rep.n_all += 1;
    rep.hit_all += hit;
    if (old_class) {
      rep.n_old += 1;
      rep.hit_old += hit;
    } else {
      rep.n_new += 1;
      rep.hit_new += hit;
    }
    class_counts[std::size_t(truth[i])] += 1;
    class_hits[std::size_t(truth[i])] += hit;
  }
  rep.acc_all = 100.0 * double(rep.hit_all) / double(rep.n_all);
  rep.acc_old = rep.n_old ? 100.0 * double(rep.hit_old) / double(rep.n_old) : 0.0;
  rep.acc_new = rep.n_new ? 100.0 * double(rep.hit_new) / double(rep.n_new) : 0.0;
  for (int c = 0; c < num_classes; ++c)
    rep.per_class_acc.push_back(
        class_counts[std::size_t(c)]
            ? 100.0 * double(class_hits[std::size_t(c)]) / double(class_counts[std::size_t(c)])
            : 0.0);
  return rep;
}

std::string metrics_to_json(const MetricsReport& rep) {
  json j;
  j["acc_all"] = rep.acc_all;
  j["acc_old"] = rep.acc_old;
  j["acc_new"] = rep.acc_new;
  j["per_class_acc"] = rep.per_class_acc;
  j["confusion"] = rep.confusion;
  j["cluster_to_class"] = rep.cluster_to_class;
  j["n_all"] = rep.n_all;
  j["n_old"] = rep.n_old;
  j["n_new"] = rep.n_new;
  j["hit_all"] = rep.hit_all;
  j["hit_old"] = rep.hit_old;
  j["hit_new"] = rep.hit_new;
  j["epoch"] = rep.epoch;
  return j.dump(2);
}

void save_metrics(const MetricsReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("metrics: cannot write " + path);
  out << metrics_to_json(rep) << "\n";
}

namespace {

double sq_dist(const Matrix& x, int row, const std::vector<double>& center) {
  double s = 0.0;
  const double* r = x.row(row);
  for (int j = 0; j < x.cols(); ++j) {
    const double d = r[j] - center[std::size_t(j)];
    s += d * d;
  }
  return s;
}

struct KmeansRun {
  std::vector<int> assign;
  double inertia = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
};

KmeansRun lloyd_once(const Matrix& x, int k, std::uint64_t seed) {
  const int n = x.rows(), d = x.cols();
  Rng rng(seed);
  std::vector<std::vector<double>> centers;

  // k-means++ seeding
  std::vector<double> dist2(std::size_t(n), std::numeric_limits<double>::infinity());
  {
    const int first = rng.uniform_int(n);
    centers.push_back(std::vector<double>(x.row(first), x.row(first) + d));
  }
  while (int(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      dist2[std::size_t(i)] = std::min(dist2[std::size_t(i)], sq_dist(x, i, centers.back()));
      total += dist2[std::size_t(i)];
    }
    int chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[std::size_t(i)];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = rng.uniform_int(n);
    }
    centers.push_back(std::vector<double>(x.row(chosen), x.row(chosen) + d));
  }

  KmeansRun run;
  run.assign.assign(std::size_t(n), -1);
  std::vector<int> next(std::size_t(n), -1);
  for (int iter = 0; iter < 300; ++iter) {
    double inertia = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : inertia) if (n > 512)
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(x, i, centers[0]);
      for (int c = 1; c < k; ++c) {
        const double dd = sq_dist(x, i, centers[std::size_t(c)]);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      next[std::size_t(i)] = best;
      inertia += best_d;
    }
    run.trace.push_back(inertia);
    run.inertia = inertia;
    if (next == run.assign) break;
    run.assign = next;

    // recompute centers; an emptied cluster restarts at the worst-fit point
    std::vector<std::vector<double>> sums(std::size_t(k), std::vector<double>(std::size_t(d), 0.0));
    std::vector<int> sizes(std::size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = run.assign[std::size_t(i)];
      sizes[std::size_t(c)] += 1;
      const double* r = x.row(i);
      for (int j = 0; j < d; ++j) sums[std::size_t(c)][std::size_t(j)] += r[j];
    }
    for (int c = 0; c < k; ++c) {
      if (sizes[std::size_t(c)] > 0) {
        for (int j = 0; j < d; ++j)
          centers[std::size_t(c)][std::size_t(j)] =
              sums[std::size_t(c)][std::size_t(j)] / sizes[std::size_t(c)];
      } else {
        int worst = 0;
        double worst_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double dd = sq_dist(x, i, centers[std::size_t(run.assign[std::size_t(i)])]);
          if (dd > worst_d) {
            worst_d = dd;
            worst = i;
          }
        }
        centers[std::size_t(c)].assign(x.row(worst), x.row(worst) + d);
      }
    }
  }
  return run;
}

}  // namespace

std::vector<int> kmeans_baseline(const Matrix& x, int num_clusters, std::uint64_t seed,
                                 int restarts, std::vector<double>* inertia_trace) {
  if (num_clusters < 2) throw ConfigError("kmeans: need at least 2 clusters");
  if (num_clusters > x.rows())
    throw ConfigError("kmeans: " + std::to_string(num_clusters) + " clusters exceed " +
                      std::to_string(x.rows()) + " samples");
  if (restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");

  KmeansRun best;
  for (int r = 0; r < restarts; ++r) {
    KmeansRun run = lloyd_once(x, num_clusters, derive_seed(seed, "kmeans_" + std::to_string(r)));
    if (run.inertia < best.inertia) best = std::move(run);
  }
  if (inertia_trace) *inertia_trace = best.trace;
  return best.assign;
}

Matrix pca_components(const Matrix& x, int ncomp) {
  const int n = x.rows(), d = x.cols();
  if (d < ncomp) throw ConfigError("pca: need at least " + std::to_string(ncomp) + " dimensions");
  if (n < 2) throw DegenerateInputError("pca: need at least 2 samples");
  std::vector<double> mean(std::size_t(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[std::size_t(j)] += x(i, j);
  for (int j = 0; j < d; ++j) mean[std::size_t(j)] /= n;

  Matrix cov(d, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double da = x(i, a) - mean[std::size_t(a)];
      for (int b = a; b < d; ++b) cov(a, b) += da * (x(i, b) - mean[std::size_t(b)]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      cov(a, b) /= n;
      cov(b, a) = cov(a, b);
    }

  // cyclic Jacobi
  Matrix vecs(d, d);
  for (int i = 0; i < d; ++i) vecs(i, i) = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += cov(p, q) * cov(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        if (std::fabs(cov(p, q)) < 1e-18) continue;
        const double theta = (cov(q, q) - cov(p, p)) / (2.0 * cov(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = cov(i, p), aiq = cov(i, q);
          cov(i, p) = c * aip - s * aiq;
          cov(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = cov(p, i), aqi = cov(q, i);
          cov(p, i) = c * api - s * aqi;
          cov(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = vecs(i, p), viq = vecs(i, q);
          vecs(i, p) = c * vip - s * viq;
          vecs(i, q) = s * vip + c * viq;
        }
      }
  }

  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < d; ++i) order.push_back({cov(i, i), i});
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  Matrix out(d, ncomp);
  for (int c = 0; c < ncomp; ++c) {
    const int src = order[std::size_t(c)].second;
    // sign convention: the largest-magnitude entry is positive
    int arg = 0;
    for (int i = 1; i < d; ++i)
      if (std::fabs(vecs(i, src)) > std::fabs(vecs(arg, src))) arg = i;
    const double sign = vecs(arg, src) >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < d; ++i) out(i, c) = sign * vecs(i, src);
  }
  return out;
}

void export_cluster_distribution(const Matrix& embeddings, const std::vector<int>& predictions,
                                 const std::vector<int>& truth, const std::string& path) {
  if (embeddings.cols() < 2)
    throw ConfigError("export: embeddings need dimension >= 2 for a 2-D projection");
  if (int(predictions.size()) != embeddings.rows() || int(truth.size()) != embeddings.rows())
    throw DimensionError("export: prediction/label lengths must match the embedding rows");
  Matrix comps = pca_components(embeddings, 2);

  std::vector<double> mean(std::size_t(embeddings.cols()), 0.0);
  for (int i = 0; i < embeddings.rows(); ++i)
    for (int j = 0; j < embeddings.cols(); ++j) mean[std::size_t(j)] += embeddings(i, j);
  for (std::size_t j = 0; j < mean.size(); ++j) mean[j] /= embeddings.rows();

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("export: cannot write " + path);
  std::fprintf(f, "pc1,pc2,cluster,label\n");
  for (int i = 0; i < embeddings.rows(); ++i) {
    double p1 = 0.0, p2 = 0.0;
    for (int j = 0; j < embeddings.cols(); ++j) {
      const double centered = embeddings(i, j) - mean[std::size_t(j)];
      p1 += centered * comps(j, 0);
      p2 += centered * comps(j, 1);
    }
    std::fprintf(f, "%.12g,%.12g,%d,%d\n", p1, p2, predictions[std::size_t(i)],
                 truth[std::size_t(i)]);
  }
  if (std::fclose(f) != 0) throw IoError("export: write failed for " + path);
}

}  // namespace psgcd
