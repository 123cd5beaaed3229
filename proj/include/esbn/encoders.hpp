#pragma once

#include <string_view>

#include "esbn/nn.hpp"

namespace esbn {

enum class EncoderKind { Conv, Mlp, Random };

std::string_view encoder_name(EncoderKind kind);
EncoderKind parse_encoder(std::string_view name);

inline constexpr std::size_t kEmbeddingDim = 128;

/// Image -> 128-d embedding. Input is [N, 1024] (row-major 32x32, values in [0,1]).
///
/// Conv:   3 x conv(32 ch, 4x4, stride 2, pad 1) -> FC 256 -> FC 128
/// Mlp:    FC 512 -> FC 256 -> FC 128
/// Random: one frozen FC 128
/// ReLU after every layer, Kaiming weights, zero biases.
template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderKind kind, Rng& rng);

  EncoderKind kind() const { return kind_; }
  Tensor<S> operator()(const Tensor<S>& images) const;
  /// Trainable parameters only; the Random kind contributes none.
  void collect(ParamList<S>& out, const std::string& prefix) const;
  /// Every tensor including frozen ones, for checkpoints.
  void collect_all(ParamList<S>& out, const std::string& prefix) const;

 private:
  EncoderKind kind_ = EncoderKind::Conv;
  std::vector<Tensor<S>> conv_w_, conv_b_;
  std::vector<Linear<S>> fc_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace esbn
