#pragma once

#include <memory>
#include <string_view>

#include "esbn/nn.hpp"

namespace esbn {

enum class ModelKind {
  Esbn,
  EsbnNoConfidence,
  EsbnDefaultMemory,
  Lstm,
  Ntm,
  Rn,
  Trn,
  Transformer,
  PrediNet,
};

inline constexpr ModelKind kAllModels[] = {ModelKind::Esbn, ModelKind::EsbnNoConfidence, ModelKind::EsbnDefaultMemory,
                                           ModelKind::Lstm, ModelKind::Ntm, ModelKind::Rn, ModelKind::Trn,
                                           ModelKind::Transformer, ModelKind::PrediNet};

/// esbn, esbn_noconf, esbn_default_mem, lstm, ntm, rn, trn, transformer, predinet
std::string_view model_name(ModelKind kind);
ModelKind parse_model(std::string_view name);
bool is_esbn(ModelKind kind);

/// Task output layer: `units` logits (1 for sigmoid tasks, 4 for softmax tasks),
/// Xavier weights, zero bias.
template <typename S>
Linear<S> output_head(std::size_t in, std::size_t units, Rng& rng) {
  if (units != 1 && units != 4) throw std::invalid_argument("output_head: units must be 1 or 4");
  return Linear<S>(in, units, Init::Xavier, rng);
}

/// The sequential core that maps an embedding sequence [B, T, 128] to logits [B, units].
template <typename S>
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual Tensor<S> forward(const Tensor<S>& z) const = 0;
  virtual void collect(ParamList<S>& out) const = 0;
  virtual ModelKind kind() const = 0;
};

/// Builds any model kind for sequences of length `steps` with `units` outputs.
template <typename S>
std::unique_ptr<SequenceModel<S>> make_sequence_model(ModelKind kind, std::size_t steps, std::size_t units, Rng& rng);

}  // namespace esbn
