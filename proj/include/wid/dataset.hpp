#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace wid {

/// Fixed-size labelled images, one flattened row-major image per row, values in [0, 1].
struct LabeledImages {
  int rows = 28;
  int cols = 28;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

}  // namespace wid
