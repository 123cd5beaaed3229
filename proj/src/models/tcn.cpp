#include "esbn/tcn.hpp"

namespace esbn {

SegmentScheme segment_scheme(taskgen::Task task) {
  if (task == taskgen::Task::Rmts) return {{0, 2}, {2, 2}, {4, 2}};
  return {{0, taskgen::sequence_length(task)}};
}

template <typename S>
Tensor<S> tcn_apply(const Tensor<S>& z, const SegmentScheme& scheme, const Tensor<S>& scale, const Tensor<S>& shift,
                    double eps) {
  if (z.dim() != 3) throw TensorError("tcn: expected [B, T, D], got " + shape_str(z.shape()));
  std::size_t covered = 0;
  std::vector<Tensor<S>> parts;
  for (const auto& [start, length] : scheme) {
    if (length == 0) throw TensorError("tcn: empty segment");
    if (start != covered) throw TensorError("tcn: segments must be contiguous and ordered");
    covered += length;
    const auto seg = slice(z, 1, start, length);
    const auto centered = sub(seg, mean(seg, 1, true));
    const auto var = mean(square(centered), 1, true);
    const auto normed = div(centered, sqrt(add_scalar(var, static_cast<S>(eps))));
    parts.push_back(add(mul(normed, scale), shift));
  }
  if (covered != z.size(1)) {
    throw TensorError("tcn: segments cover " + std::to_string(covered) + " steps, sequence has " +
                      std::to_string(z.size(1)));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

template <typename S>
Tcn<S>::Tcn(bool on, SegmentScheme segments, std::size_t dim)
    : enabled(on), scheme(std::move(segments)) {
  if (enabled) {
    scale = Tensor<S>::full({dim}, S(1), true);
    shift = Tensor<S>::zeros({dim}, true);
  }
}

template <typename S>
Tensor<S> Tcn<S>::operator()(const Tensor<S>& z) const {
  return enabled ? tcn_apply(z, scheme, scale, shift) : z;
}

template <typename S>
void Tcn<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  if (!enabled) return;
  out.push_back({prefix + ".scale", scale});
  out.push_back({prefix + ".shift", shift});
}

template Tensor<float> tcn_apply(const Tensor<float>&, const SegmentScheme&, const Tensor<float>&,
                                 const Tensor<float>&, double);
template Tensor<double> tcn_apply(const Tensor<double>&, const SegmentScheme&, const Tensor<double>&,
                                  const Tensor<double>&, double);
template struct Tcn<float>;
template struct Tcn<double>;

}  // namespace esbn
