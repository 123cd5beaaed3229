#pragma once

// Comparison architectures. All consume the same [B, T, 128] embedding
// sequence and end in the task output head.

#include "esbn/sequence_model.hpp"

namespace esbn {

template <typename S>
class LstmModel final : public SequenceModel<S> {
 public:
  LstmModel(std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::Lstm; }

  LstmCell<S> cell_;
  Linear<S> head_;
};

/// One read head and one write head over a learned 10 x 256 initial memory.
/// Content addressing (cosine, softplus strength), interpolation, 3-way
/// circular shift; no sharpening. Writes erase then add.
template <typename S>
class NtmModel final : public SequenceModel<S> {
 public:
  static constexpr std::size_t kRows = 10;
  static constexpr std::size_t kWidth = 256;

  NtmModel(std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::Ntm; }

  struct Head {
    Linear<S> key, strength, gate, shift;
  };
  LstmCell<S> controller_;
  Head read_, write_;
  Linear<S> erase_, add_;
  Tensor<S> memory0_;  // [10, 256]
  Linear<S> head_;
};

/// Location step shared by both heads: softmax(strength * cosine) content
/// weights, interpolated with the previous weights by `gate`, then circularly
/// convolved with the shift distribution over offsets (-1, 0, +1).
/// memory [B, N, W], key [B, W], strength/gate [B, 1], shift [B, 3], prev [B, N].
template <typename S>
Tensor<S> ntm_address(const Tensor<S>& memory, const Tensor<S>& key, const Tensor<S>& strength, const Tensor<S>& gate,
                      const Tensor<S>& shift, const Tensor<S>& prev);

/// memory * (1 - w e^T) + w a^T for w [B, N], erase/add [B, W].
template <typename S>
Tensor<S> ntm_write(const Tensor<S>& memory, const Tensor<S>& w, const Tensor<S>& erase, const Tensor<S>& add_vec);

/// Relation network over all T^2 ordered pairs (self-pairs included) of
/// position-tagged embeddings.
template <typename S>
class RnModel final : public SequenceModel<S> {
 public:
  RnModel(std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::Rn; }

  Linear<S> g1_, g2_, f1_, head_;
  bool use_tags_ = true;
};

/// Temporal relation network over ordered pairs i<j and triples i<j<k.
template <typename S>
class TrnModel final : public SequenceModel<S> {
 public:
  TrnModel(std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::Trn; }

  Linear<S> pair1_, pair2_, pair_fc_, tri1_, tri2_, tri_fc_, joint_, head_;
};

/// Single post-norm encoder layer: 8-head self-attention and a 512-unit MLP.
template <typename S>
class TransformerModel final : public SequenceModel<S> {
 public:
  static constexpr std::size_t kHeads = 8;

  TransformerModel(std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::Transformer; }

  /// Attention weights [B * heads, T, T] for the input sequence z.
  Tensor<S> attention(const Tensor<S>& z) const;

  Linear<S> q_, k_, v_, o_, ff1_, ff2_, hidden_, head_;
  Tensor<S> ln1_g_, ln1_b_, ln2_g_, ln2_b_;

 private:
  Tensor<S> attend(const Tensor<S>& x, Tensor<S>* weights) const;
};

/// PrediNet over the temporal sequence: 32 heads, keys of size 16, 16 relations.
template <typename S>
class PrediNetModel final : public SequenceModel<S> {
 public:
  static constexpr std::size_t kHeads = 32;
  static constexpr std::size_t kKey = 16;
  static constexpr std::size_t kRelations = 16;

  PrediNetModel(std::size_t steps, std::size_t units, Rng& rng);
  Tensor<S> forward(const Tensor<S>& z) const override;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override { return ModelKind::PrediNet; }

  /// Per-head features [B, 32, 18] before the output MLP.
  Tensor<S> head_features(const Tensor<S>& z) const;

  std::size_t steps_;
  Tensor<S> w_k_;              // [16, 129]
  Tensor<S> w_q1_, w_q2_;      // [32 * 16, T * 129]
  Tensor<S> w_s_;              // [16, 129]
  Linear<S> hidden_, head_;
};

/// Appends the integer position 0..T-1 as an extra feature: [B, T, D] -> [B, T, D + 1].
template <typename S>
Tensor<S> append_position_tags(const Tensor<S>& z);

}  // namespace esbn
