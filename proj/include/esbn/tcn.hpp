#pragma once

#include <utility>
#include <vector>

#include "esbn/nn.hpp"
#include "esbn/taskgen.hpp"

namespace esbn {

/// Contiguous [start, start + length) windows along the time axis.
using SegmentScheme = std::vector<std::pair<std::size_t, std::size_t>>;

/// RMTS normalizes the source pair and each target pair separately; every
/// other task uses one window over the whole sequence.
SegmentScheme segment_scheme(taskgen::Task task);

/// z' = scale * (z - mean) / sqrt(var + eps) + shift, per segment and
/// dimension, with population variance. z is [B, T, D]; scale/shift are [D].
template <typename S>
Tensor<S> tcn_apply(const Tensor<S>& z, const SegmentScheme& scheme, const Tensor<S>& scale, const Tensor<S>& shift,
                    double eps = 1e-8);

template <typename S>
struct Tcn {
  bool enabled = false;
  SegmentScheme scheme;
  Tensor<S> scale;  // init 1
  Tensor<S> shift;  // init 0

  Tcn() = default;
  Tcn(bool on, SegmentScheme segments, std::size_t dim);

  /// Identity when disabled.
  Tensor<S> operator()(const Tensor<S>& z) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

extern template struct Tcn<float>;
extern template struct Tcn<double>;

}  // namespace esbn
