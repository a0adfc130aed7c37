#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "st/errors.hpp"
#include "st/tensor.hpp"

namespace st {

// Penultimate-layer activations grouped by class. Each class holds an
// [n_i x d] row matrix; d must agree across classes.
template <typename S = float>
struct ActivationSet {
  std::vector<MatrixR<S>> classes;

  int class_count() const { return int(classes.size()); }

  int dim() const {
    for (const auto& m : classes)
      if (m.rows() > 0) return int(m.cols());
    return 0;
  }

  void resize_classes(int k) { classes.resize(size_t(k)); }

  void add(int label, const S* vec, int d) {
    if (label >= class_count()) classes.resize(size_t(label) + 1);
    auto& m = classes[size_t(label)];
    if (m.rows() == 0)
      m.resize(0, d);
    else
      require(int(m.cols()) == d, Err::shape_mismatch, "activation dimensionality differs");
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    for (int j = 0; j < d; ++j) m(m.rows() - 1, j) = vec[j];
  }
};

namespace detail {
template <typename S>
const MatrixR<S>& nonempty_class(const ActivationSet<S>& as, int i) {
  require(i >= 0 && i < as.class_count(), Err::empty_class, "class " + std::to_string(i) + " not present");
  require(as.classes[size_t(i)].rows() > 0, Err::empty_class, "class " + std::to_string(i) + " is empty");
  return as.classes[size_t(i)];
}
}  // namespace detail

// All distance work accumulates in double regardless of the activation
// scalar; at the set sizes involved exactness beats speed.

template <typename S>
Eigen::VectorXd cluster_center(const ActivationSet<S>& as, int i) {
  const auto& m = detail::nonempty_class(as, i);
  return m.template cast<double>().colwise().mean().transpose();
}

// Mean Euclidean distance of class members to the class center.
template <typename S>
double intra_class_distance(const ActivationSet<S>& as, int i) {
  const auto& m = detail::nonempty_class(as, i);
  const Eigen::VectorXd c = cluster_center(as, i);
  double acc = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    acc += (m.row(r).template cast<double>().transpose() - c).norm();
  return acc / double(m.rows());
}

// Max Euclidean distance of class members to the class center.
template <typename S>
double class_radius(const ActivationSet<S>& as, int i) {
  const auto& m = detail::nonempty_class(as, i);
  const Eigen::VectorXd c = cluster_center(as, i);
  double best = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    best = std::max(best, (m.row(r).template cast<double>().transpose() - c).norm());
  return best;
}

// Minimum Euclidean distance over all cross pairs, computed exactly.
template <typename S>
double inter_class_distance(const ActivationSet<S>& as, int i, int j) {
  require(i != j, Err::same_class, "inter-class distance needs two distinct classes");
  const auto& a = detail::nonempty_class(as, i);
  const auto& b = detail::nonempty_class(as, j);
  const Eigen::MatrixXd ad = a.template cast<double>();
  const Eigen::MatrixXd bd = b.template cast<double>();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < ad.rows(); ++r)
    for (Eigen::Index s = 0; s < bd.rows(); ++s)
      best = std::min(best, (ad.row(r) - bd.row(s)).squaredNorm());
  return std::sqrt(best);
}

struct ClusterStats {
  std::vector<Eigen::VectorXd> centers;
  Eigen::VectorXd sigma;    // intra-class distance per class
  Eigen::VectorXd radius;   // max member distance per class
  Eigen::MatrixXd inter;    // symmetric, diagonal zero
};

template <typename S>
ClusterStats cluster_stats(const ActivationSet<S>& as) {
  const int k = as.class_count();
  ClusterStats stats;
  stats.centers.resize(size_t(k));
  stats.sigma.resize(k);
  stats.radius.resize(k);
  stats.inter = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    stats.centers[size_t(i)] = cluster_center(as, i);
    stats.sigma[i] = intra_class_distance(as, i);
    stats.radius[i] = class_radius(as, i);
  }
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double d = inter_class_distance(as, i, j);
      stats.inter(i, j) = d;
      stats.inter(j, i) = d;
    }
  return stats;
}

inline constexpr double kAcmDenominatorFloor = 1e-12;

// Mean over ordered class pairs (i != j) of
// inter(i,j) / (radius(i)*sigma(i) + radius(j)*sigma(j)).
// High values mean tight, well-separated clusters.
inline double acm_from_stats(const ClusterStats& stats) {
  const int k = int(stats.sigma.size());
  require(k >= 2, Err::too_few_classes, "ACM needs at least two classes");
  double acc = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      const double denom = stats.radius[i] * stats.sigma[i] + stats.radius[j] * stats.sigma[j];
      require(denom > kAcmDenominatorFloor, Err::degenerate_cluster,
              "collapsed clusters for pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
      acc += stats.inter(i, j) / denom;
    }
  return acc / (double(k) * double(k - 1));
}

template <typename S>
double acm(const ActivationSet<S>& as) {
  require(as.class_count() >= 2, Err::too_few_classes, "ACM needs at least two classes");
  return acm_from_stats(cluster_stats(as));
}

// STACT1 on-disk format (little endian):
//   "STACT1" | u32 k | u32 d | records until EOF, record := u32 label | f32[d]
void save_activation_dump(const std::string& path, const ActivationSet<float>& as);
ActivationSet<float> load_activation_dump(const std::string& path);

}  // namespace st
