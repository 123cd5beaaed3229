#include "esbn/encoders.hpp"

#include <stdexcept>
#include <string>

namespace esbn {

std::string_view encoder_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Conv: return "conv";
    case EncoderKind::Mlp: return "mlp";
    case EncoderKind::Random: return "random";
  }
  throw std::invalid_argument("unknown encoder kind");
}

EncoderKind parse_encoder(std::string_view name) {
  for (auto k : {EncoderKind::Conv, EncoderKind::Mlp, EncoderKind::Random}) {
    if (encoder_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown encoder '" + std::string(name) + "' (expected conv, mlp or random)");
}

template <typename S>
Encoder<S>::Encoder(EncoderKind kind, Rng& rng) : kind_(kind) {
  switch (kind) {
    case EncoderKind::Conv: {
      std::size_t in = 1;
      for (int layer = 0; layer < 3; ++layer) {
        conv_w_.push_back(init_kaiming_normal<S>({32, in, 4, 4}, in * 16, rng));
        conv_b_.push_back(Tensor<S>::zeros({32}, true));
        in = 32;
      }
      fc_.emplace_back(512, 256, Init::Kaiming, rng);
      fc_.emplace_back(256, kEmbeddingDim, Init::Kaiming, rng);
      break;
    }
    case EncoderKind::Mlp:
      fc_.emplace_back(1024, 512, Init::Kaiming, rng);
      fc_.emplace_back(512, 256, Init::Kaiming, rng);
      fc_.emplace_back(256, kEmbeddingDim, Init::Kaiming, rng);
      break;
    case EncoderKind::Random:
      fc_.emplace_back(1024, kEmbeddingDim, Init::Kaiming, rng, 1.0, false);
      break;
  }
}

template <typename S>
Tensor<S> Encoder<S>::operator()(const Tensor<S>& images) const {
  if (images.dim() != 2 || images.size(1) != 1024) {
    throw TensorError("encoder: expected images [N, 1024], got " + shape_str(images.shape()));
  }
  Tensor<S> h = images;
  if (kind_ == EncoderKind::Conv) {
    const std::size_t n = images.size(0);
    h = reshape(h, {n, 1, 32, 32});
    for (std::size_t layer = 0; layer < conv_w_.size(); ++layer) h = relu(conv2d(h, conv_w_[layer], conv_b_[layer], 2, 1));
    h = reshape(h, {n, 512});
  }
  for (const auto& fc : fc_) h = relu(fc(h));
  return h;
}

template <typename S>
void Encoder<S>::collect_all(ParamList<S>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < conv_w_.size(); ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i) + ".weight", conv_w_[i]});
    out.push_back({prefix + ".conv" + std::to_string(i) + ".bias", conv_b_[i]});
  }
  for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].collect(out, prefix + ".fc" + std::to_string(i));
}

template <typename S>
void Encoder<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  if (kind_ != EncoderKind::Random) collect_all(out, prefix);
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace esbn
