#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psgcd/matrix.hpp"

namespace psgcd {

struct AssignmentResult {
  std::vector<int> cluster_to_class;  // bijection over [0, K)
  long long matched = 0;              // total count lying on the matching
};

// Maximum-trace assignment over a square nonnegative count matrix
// (rows = clusters, cols = classes). Among equally good assignments the
// lexicographically smallest one wins: cluster 0 takes the lowest class index
// compatible with an optimal completion, then cluster 1, and so on.
AssignmentResult hungarian_match(const Matrix& confusion);

struct MetricsReport {
  double acc_all = 0.0, acc_old = 0.0, acc_new = 0.0;  // percentages
  std::vector<double> per_class_acc;
  std::vector<std::vector<long long>> confusion;  // cluster x class
  std::vector<int> cluster_to_class;
  long long n_all = 0, n_old = 0, n_new = 0;
  long long hit_all = 0, hit_old = 0, hit_new = 0;
  int epoch = -1;
};

void save_metrics(const MetricsReport& report, const std::string& path);
std::string metrics_to_json(const MetricsReport& report);

// Single global matching over every evaluation sample; old/new accuracies
// reuse the same cluster-to-class map restricted to known/novel true classes.
MetricsReport gcd_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth,
                           const std::vector<int>& labeled_classes, int num_classes);

// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
// inertia. Deterministic given the seed. inertia_trace, when provided,
// receives the per-iteration inertia of the winning restart.
std::vector<int> kmeans_baseline(const Matrix& x, int num_clusters, std::uint64_t seed,
                                 int restarts = 5, std::vector<double>* inertia_trace = nullptr);

// Top principal components (columns), deterministic sign convention.
Matrix pca_components(const Matrix& x, int ncomp);

// 2-D PCA projection with cluster id and true label per point, CSV.
void export_cluster_distribution(const Matrix& embeddings, const std::vector<int>& predictions,
                                 const std::vector<int>& truth, const std::string& path);

}  // namespace psgcd
