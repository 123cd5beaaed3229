#pragma once

// Emergent Symbol Binding Network: an LSTM controller that reads image
// embeddings only through a key/value episodic memory.

#include <vector>

#include "esbn/sequence_model.hpp"

namespace esbn {

/// Per-episode memory: keys [B, 256] and values [B, 128], one pair per step.
template <typename S>
struct EpisodicMemory {
  std::vector<Tensor<S>> keys;
  std::vector<Tensor<S>> values;

  std::size_t size() const { return keys.size(); }
  void append(Tensor<S> key, Tensor<S> value);
};

struct RetrievalTrace {
  std::vector<double> weights;      // w for batch row 0
  std::vector<double> confidences;  // c for batch row 0
};

/// k_r = g * sum_i w_i (M_k(i) ++ c_i) with w = softmax(M_v z), c = sigmoid(gamma * M_v z + beta).
/// With confidence off, k_r = g * sum_i w_i M_k(i). Empty memory yields zeros.
/// z [B, 128], g [B, 1], gamma/beta [1]; returns [B, 257] or [B, 256].
template <typename S>
Tensor<S> retrieve(const EpisodicMemory<S>& memory, const Tensor<S>& z, const Tensor<S>& gamma,
                   const Tensor<S>& beta, const Tensor<S>& g, bool confidence, std::size_t key_dim,
                   RetrievalTrace* trace = nullptr);

/// Keys written and retrieved during one forward pass, one [B, 256] matrix per step.
struct KeyCapture {
  std::vector<std::vector<float>> written;    // k_w per step, row-major [B * 256]
  std::vector<std::vector<float>> retrieved;  // k_r per step (key part only)
  std::size_t batch = 0;
};

enum class EsbnVariant { Standard, NoConfidence, DefaultMemory };

template <typename S>
class Esbn final : public SequenceModel<S> {
 public:
  static constexpr std::size_t kHidden = 512;
  static constexpr std::size_t kKeyDim = 256;

  Esbn(EsbnVariant variant, std::size_t units, Rng& rng);

  Tensor<S> forward(const Tensor<S>& z) const override { return run(z, nullptr, nullptr); }
  /// Forward pass that also records keys and the final memory size.
  Tensor<S> run(const Tensor<S>& z, KeyCapture* capture, std::size_t* memory_size) const;
  void collect(ParamList<S>& out) const override;
  ModelKind kind() const override;

  EsbnVariant variant() const { return variant_; }
  std::size_t controller_input() const { return controller_.input_size(); }

  LstmCell<S> controller_;
  Linear<S> key_head_;   // 512 -> 256, ReLU, Kaiming
  Linear<S> gate_head_;  // 512 -> 1, sigmoid, Xavier
  Linear<S> out_head_;
  Tensor<S> gamma_, beta_;
  Tensor<S> default_key_, default_value_;  // DefaultMemory only

 private:
  EsbnVariant variant_;
};

extern template class Esbn<float>;
extern template class Esbn<double>;

}  // namespace esbn
