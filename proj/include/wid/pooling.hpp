#pragma once

#include "wid/convnet.hpp"
#include "wid/error.hpp"
#include "wid/hogmap.hpp"
#include "wid/saliency.hpp"

#include <string>
#include <vector>

namespace wid {

enum class Pooling { Average, Pre, Post };

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Average: return "average";
    case Pooling::Pre: return "pre";
    case Pooling::Post: return "post";
  }
  return "post";
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "average") return Pooling::Average;
  if (s == "pre") return Pooling::Pre;
  if (s == "post") return Pooling::Post;
  fail(ErrorKind::ConfigError, "pooling must be average, pre or post (got '" + s + "')");
}

using Map2d = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename Scalar>
Map2d as_map(const Eigen::Matrix<double, 1, Eigen::Dynamic>& flat, const FeatureStack<Scalar>& stack) {
  return Eigen::Map<const Map2d>(flat.data(), stack.height, stack.width);
}

inline void check_profile(int layer, int filters, const SaliencyProfile& w) {
  if (w.layer != layer || w.filters() != filters)
    fail(ErrorKind::ProfileMismatch, "profile for layer " + std::to_string(w.layer) + " with " +
                                         std::to_string(w.filters()) + " filters applied to layer " +
                                         std::to_string(layer) + " with " + std::to_string(filters));
}

}  // namespace detail

/// Equal-weight mean of the stack's maps.
template <typename Scalar>
Map2d average_pool(const FeatureStack<Scalar>& stack) {
  if (stack.filters() == 0) fail(ErrorKind::EmptyStack, "no feature maps");
  const Eigen::Matrix<double, 1, Eigen::Dynamic> mean = stack.maps.template cast<double>().colwise().mean();
  return detail::as_map(mean, stack);
}

/// Saliency-weighted sum of the stack's maps.
template <typename Scalar>
Map2d weighted_pool(const FeatureStack<Scalar>& stack, const std::vector<double>& weights) {
  if (stack.filters() == 0) fail(ErrorKind::EmptyStack, "no feature maps");
  if (static_cast<int>(weights.size()) != stack.filters())
    fail(ErrorKind::ProfileMismatch, "one weight per filter required");
  const Eigen::Map<const Eigen::RowVectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const Eigen::Matrix<double, 1, Eigen::Dynamic> sum = w * stack.maps.template cast<double>();
  return detail::as_map(sum, stack);
}

template <typename Scalar>
Map2d pre_saliency_pool(const FeatureStack<Scalar>& stack, const SaliencyProfile& profile) {
  detail::check_profile(stack.layer, stack.filters(), profile);
  return weighted_pool(stack, profile.weights);
}

/// One descriptor per filter map, as the rows of an F x length matrix.
template <typename Scalar>
Eigen::MatrixXd filter_descriptors(const FeatureStack<Scalar>& stack, const HogParams& params) {
  Eigen::MatrixXd out(stack.filters(), params.length());
  for (int f = 0; f < stack.filters(); ++f) {
    const Eigen::Matrix<double, 1, Eigen::Dynamic> row = stack.maps.row(f).template cast<double>();
    out.row(f) = descriptor(detail::as_map(row, stack), params).transpose();
  }
  return out;
}

struct PostPooled {
  Eigen::VectorXd values;
  bool zero = false;  ///< every contributing descriptor was zero
};

/// Weighted sum of per-filter descriptors (rows of `hogs`), L2-normalised.
inline PostPooled post_saliency_pool(const Eigen::MatrixXd& hogs, const std::vector<double>& weights) {
  if (hogs.rows() == 0) fail(ErrorKind::EmptyStack, "no descriptors");
  if (static_cast<Eigen::Index>(weights.size()) != hogs.rows())
    fail(ErrorKind::ProfileMismatch, "one weight per descriptor required");
  const Eigen::Map<const Eigen::RowVectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const Eigen::VectorXd sum = (w * hogs).transpose();
  PostPooled out;
  out.values = l2_normalized(sum);
  out.zero = out.values.isZero(0);
  return out;
}

struct PooledDescriptor {
  Eigen::VectorXd values;  ///< unit norm, or zero
  Pooling strategy = Pooling::Post;
  int layer = 0;
  std::string saliency_digest;  ///< empty for average pooling

  bool zero() const { return values.isZero(0); }
};

/// The full per-layer descriptor of one fragment's feature stack.
template <typename Scalar>
PooledDescriptor pooled_descriptor(const FeatureStack<Scalar>& stack, Pooling strategy,
                                   const SaliencyProfile* profile, const HogParams& params) {
  PooledDescriptor d;
  d.strategy = strategy;
  d.layer = stack.layer;
  if (strategy != Pooling::Average) {
    if (!profile) fail(ErrorKind::ProfileMismatch, to_string(strategy) + " pooling needs a saliency profile");
    detail::check_profile(stack.layer, stack.filters(), *profile);
    d.saliency_digest = profile->digest();
  }
  switch (strategy) {
    case Pooling::Average: d.values = descriptor(average_pool(stack), params); break;
    case Pooling::Pre: d.values = descriptor(pre_saliency_pool(stack, *profile), params); break;
    case Pooling::Post:
      d.values = post_saliency_pool(filter_descriptors(stack, params), profile->weights).values;
      break;
  }
  return d;
}

}  // namespace wid
