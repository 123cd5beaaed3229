#include "esbn/esbn.hpp"

#include <stdexcept>

namespace esbn {

template <typename S>
void EpisodicMemory<S>::append(Tensor<S> key, Tensor<S> value) {
  keys.push_back(std::move(key));
  values.push_back(std::move(value));
}

template <typename S>
Tensor<S> retrieve(const EpisodicMemory<S>& memory, const Tensor<S>& z, const Tensor<S>& gamma,
                   const Tensor<S>& beta, const Tensor<S>& g, bool confidence, std::size_t key_dim,
                   RetrievalTrace* trace) {
  const std::size_t batch = z.size(0);
  const std::size_t out_dim = key_dim + (confidence ? 1 : 0);
  if (memory.keys.size() != memory.values.size()) throw std::logic_error("retrieve: key/value count mismatch");
  const std::size_t n = memory.size();
  if (n == 0) return Tensor<S>::zeros({batch, out_dim});
  const auto mk = stack(memory.keys, 1);    // [B, n, 256]
  const auto mv = stack(memory.values, 1);  // [B, n, 128]
  const auto dots = reshape(bmm(mv, reshape(z, {batch, 1, z.size(1)}), true), {batch, n});
  const auto w = softmax(dots);
  Tensor<S> entries = mk;
  Tensor<S> c;
  if (confidence) {
    c = sigmoid(add(mul(dots, gamma), beta));
    entries = concat<S>({mk, reshape(c, {batch, n, 1})}, 2);
  }
  if (trace) {
    trace->weights.assign(w.data().begin(), w.data().begin() + static_cast<std::ptrdiff_t>(n));
    if (confidence) trace->confidences.assign(c.data().begin(), c.data().begin() + static_cast<std::ptrdiff_t>(n));
  }
  const auto kr = reshape(bmm(reshape(w, {batch, 1, n}), entries), {batch, out_dim});
  return mul(kr, g);
}

template <typename S>
Esbn<S>::Esbn(EsbnVariant variant, std::size_t units, Rng& rng) : variant_(variant) {
  const std::size_t in = kKeyDim + (variant == EsbnVariant::Standard ? 1 : 0);
  controller_ = LstmCell<S>(in, kHidden, rng);
  key_head_ = Linear<S>(kHidden, kKeyDim, Init::Kaiming, rng);
  gate_head_ = Linear<S>(kHidden, 1, Init::Xavier, rng);
  out_head_ = output_head<S>(kHidden, units, rng);
  gamma_ = Tensor<S>::full({1}, S(1), true);
  beta_ = Tensor<S>::zeros({1}, true);
  if (variant == EsbnVariant::DefaultMemory) {
    default_key_ = Tensor<S>::zeros({kKeyDim}, true);
    default_value_ = Tensor<S>::zeros({128}, true);
  }
}

template <typename S>
Tensor<S> Esbn<S>::run(const Tensor<S>& z, KeyCapture* capture, std::size_t* memory_size) const {
  if (z.dim() != 3 || z.size(2) != 128) throw TensorError("esbn: expected [B, T, 128], got " + shape_str(z.shape()));
  const std::size_t batch = z.size(0), steps = z.size(1);
  if (steps == 0) throw TensorError("esbn: empty sequence");
  const bool confidence = variant_ == EsbnVariant::Standard;
  auto state = controller_.zero_state(batch);
  Tensor<S> kr = Tensor<S>::zeros({batch, controller_.input_size()});
  EpisodicMemory<S> memory;
  if (variant_ == EsbnVariant::DefaultMemory) {
    memory.append(add(Tensor<S>::zeros({batch, kKeyDim}), default_key_), add(Tensor<S>::zeros({batch, 128}), default_value_));
  }
  if (capture) {
    *capture = {};
    capture->batch = batch;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    state = controller_.step(kr, state);
    const auto kw = relu(key_head_(state.h));
    const auto g = sigmoid(gate_head_(state.h));
    const auto zt = reshape(slice(z, 1, t, 1), {batch, 128});
    kr = retrieve(memory, zt, gamma_, beta_, g, confidence, kKeyDim);
    memory.append(kw, zt);
    if (capture) {
      capture->written.emplace_back(kw.data().begin(), kw.data().end());
      const auto key_part = confidence ? slice(kr, 1, 0, kKeyDim) : kr;
      capture->retrieved.emplace_back(key_part.data().begin(), key_part.data().end());
    }
  }
  state = controller_.step(kr, state);
  if (memory_size) *memory_size = memory.size();
  return out_head_(state.h);
}

template <typename S>
void Esbn<S>::collect(ParamList<S>& out) const {
  controller_.collect(out, "esbn.controller");
  key_head_.collect(out, "esbn.key_head");
  gate_head_.collect(out, "esbn.gate_head");
  out_head_.collect(out, "esbn.output");
  out.push_back({"esbn.gamma", gamma_});
  out.push_back({"esbn.beta", beta_});
  if (variant_ == EsbnVariant::DefaultMemory) {
    out.push_back({"esbn.default_key", default_key_});
    out.push_back({"esbn.default_value", default_value_});
  }
}

template <typename S>
ModelKind Esbn<S>::kind() const {
  switch (variant_) {
    case EsbnVariant::Standard: return ModelKind::Esbn;
    case EsbnVariant::NoConfidence: return ModelKind::EsbnNoConfidence;
    case EsbnVariant::DefaultMemory: return ModelKind::EsbnDefaultMemory;
  }
  return ModelKind::Esbn;
}

template struct EpisodicMemory<float>;
template struct EpisodicMemory<double>;
template Tensor<float> retrieve(const EpisodicMemory<float>&, const Tensor<float>&, const Tensor<float>&,
                                const Tensor<float>&, const Tensor<float>&, bool, std::size_t, RetrievalTrace*);
template Tensor<double> retrieve(const EpisodicMemory<double>&, const Tensor<double>&, const Tensor<double>&,
                                 const Tensor<double>&, const Tensor<double>&, bool, std::size_t, RetrievalTrace*);
template class Esbn<float>;
template class Esbn<double>;

}  // namespace esbn
