#include "esbn/baselines.hpp"

#include <cmath>

namespace esbn {

namespace {

template <typename S>
Tensor<S> step_input(const Tensor<S>& z, std::size_t t) {
  return reshape(slice(z, 1, t, 1), {z.size(0), z.size(2)});
}

template <typename S>
void check_sequence(const Tensor<S>& z, const char* who) {
  if (z.dim() != 3 || z.size(1) == 0) {
    throw TensorError(std::string(who) + ": expected non-empty [B, T, D], got " + shape_str(z.shape()));
  }
}

template <typename S>
Tensor<S> broadcast_batch(const Tensor<S>& x, std::size_t batch) {
  Shape shape = x.shape();
  shape.insert(shape.begin(), batch);
  return add(Tensor<S>::zeros(shape), x);
}

}  // namespace

template <typename S>
Tensor<S> append_position_tags(const Tensor<S>& z) {
  const std::size_t b = z.size(0), t = z.size(1);
  std::vector<S> tags(t);
  for (std::size_t i = 0; i < t; ++i) tags[i] = static_cast<S>(i);
  const auto column = add(Tensor<S>::zeros({b, t, 1}), Tensor<S>::from_data({t, 1}, std::move(tags)));
  return concat<S>({z, column}, 2);
}

// ----- LSTM -----

template <typename S>
LstmModel<S>::LstmModel(std::size_t units, Rng& rng)
    : cell_(128, 512, rng), head_(output_head<S>(512, units, rng)) {}

template <typename S>
Tensor<S> LstmModel<S>::forward(const Tensor<S>& z) const {
  check_sequence(z, "lstm");
  auto state = cell_.zero_state(z.size(0));
  for (std::size_t t = 0; t < z.size(1); ++t) state = cell_.step(step_input(z, t), state);
  return head_(state.h);
}

template <typename S>
void LstmModel<S>::collect(ParamList<S>& out) const {
  cell_.collect(out, "lstm.cell");
  head_.collect(out, "lstm.output");
}

// ----- NTM -----

template <typename S>
Tensor<S> ntm_address(const Tensor<S>& memory, const Tensor<S>& key, const Tensor<S>& strength, const Tensor<S>& gate,
                      const Tensor<S>& shift, const Tensor<S>& prev) {
  const std::size_t b = memory.size(0), n = memory.size(1), w = memory.size(2);
  const S eps = S(1e-8);
  const auto dots = reshape(bmm(reshape(key, {b, 1, w}), memory, true), {b, n});
  const auto key_norm = sqrt(add_scalar(sum(square(key), 1, true), eps));
  const auto row_norm = sqrt(add_scalar(sum(square(memory), 2), eps));
  const auto cosine = div(dots, mul(key_norm, row_norm));
  const auto content = softmax(mul(cosine, strength));
  const auto gated = add(mul(gate, content), mul(affine(gate, S(-1), S(1)), prev));
  return add(add(mul(slice(shift, 1, 0, 1), roll(gated, -1, 1)), mul(slice(shift, 1, 1, 1), gated)),
             mul(slice(shift, 1, 2, 1), roll(gated, 1, 1)));
}

template <typename S>
Tensor<S> ntm_write(const Tensor<S>& memory, const Tensor<S>& w, const Tensor<S>& erase, const Tensor<S>& add_vec) {
  const std::size_t b = memory.size(0), n = memory.size(1), width = memory.size(2);
  const auto wcol = reshape(w, {b, n, 1});
  const auto keep = affine(mul(wcol, reshape(erase, {b, 1, width})), S(-1), S(1));
  return add(mul(memory, keep), mul(wcol, reshape(add_vec, {b, 1, width})));
}

template <typename S>
NtmModel<S>::NtmModel(std::size_t units, Rng& rng) : controller_(128 + kWidth, 512, rng) {
  const double tanh_gain = 5.0 / 3.0;
  read_.key = Linear<S>(512, kWidth, Init::Xavier, rng, tanh_gain);
  read_.strength = Linear<S>(512, 1, Init::Kaiming, rng);
  read_.gate = Linear<S>(512, 1, Init::Xavier, rng);
  read_.shift = Linear<S>(512, 3, Init::Xavier, rng);
  erase_ = Linear<S>(512, kWidth, Init::Xavier, rng);
  add_ = Linear<S>(512, kWidth, Init::Xavier, rng, tanh_gain);
  write_.key = Linear<S>(512, kWidth, Init::Xavier, rng, tanh_gain);
  write_.strength = Linear<S>(512, 1, Init::Kaiming, rng);
  write_.gate = Linear<S>(512, 1, Init::Xavier, rng);
  write_.shift = Linear<S>(512, 3, Init::Xavier, rng);
  memory0_ = init_xavier_normal<S>({kRows, kWidth}, kWidth, kRows, 1.0, rng);
  head_ = output_head<S>(512, units, rng);
}

template <typename S>
Tensor<S> NtmModel<S>::forward(const Tensor<S>& z) const {
  check_sequence(z, "ntm");
  const std::size_t b = z.size(0), steps = z.size(1);
  auto memory = broadcast_batch(memory0_, b);
  auto read = Tensor<S>::zeros({b, kWidth});
  auto w_read = Tensor<S>::zeros({b, kRows});
  auto w_write = Tensor<S>::zeros({b, kRows});
  auto state = controller_.zero_state(b);
  auto address = [&](const Head& head, const Tensor<S>& h, const Tensor<S>& prev) {
    return ntm_address(memory, tanh(head.key(h)), softplus(head.strength(h)), sigmoid(head.gate(h)),
                       softmax(head.shift(h)), prev);
  };
  for (std::size_t t = 0; t < steps; ++t) {
    state = controller_.step(concat<S>({step_input(z, t), read}, 1), state);
    const auto& h = state.h;
    w_write = address(write_, h, w_write);
    memory = ntm_write(memory, w_write, sigmoid(erase_(h)), tanh(add_(h)));
    w_read = address(read_, h, w_read);
    read = reshape(bmm(reshape(w_read, {b, 1, kRows}), memory), {b, kWidth});
  }
  // Extra step: the controller sees the final read vector with a blank input.
  state = controller_.step(concat<S>({Tensor<S>::zeros({b, z.size(2)}), read}, 1), state);
  return head_(state.h);
}

template <typename S>
void NtmModel<S>::collect(ParamList<S>& out) const {
  controller_.collect(out, "ntm.controller");
  for (auto [head, name] : {std::pair{&read_, "read"}, std::pair{&write_, "write"}}) {
    const std::string p = std::string("ntm.") + name;
    head->key.collect(out, p + ".key");
    head->strength.collect(out, p + ".strength");
    head->gate.collect(out, p + ".gate");
    head->shift.collect(out, p + ".shift");
  }
  erase_.collect(out, "ntm.write.erase");
  add_.collect(out, "ntm.write.add");
  out.push_back({"ntm.memory0", memory0_});
  head_.collect(out, "ntm.output");
}

// ----- RN -----

template <typename S>
RnModel<S>::RnModel(std::size_t units, Rng& rng)
    : g1_(2 * 129, 512, Init::Kaiming, rng),
      g2_(512, 256, Init::Kaiming, rng),
      f1_(256, 256, Init::Kaiming, rng),
      head_(output_head<S>(256, units, rng)) {}

template <typename S>
Tensor<S> RnModel<S>::forward(const Tensor<S>& z) const {
  check_sequence(z, "rn");
  const std::size_t t = z.size(1);
  const auto objects = use_tags_ ? append_position_tags(z) : concat<S>({z, Tensor<S>::zeros({z.size(0), t, 1})}, 2);
  std::vector<std::size_t> left, right;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      left.push_back(i);
      right.push_back(j);
    }
  }
  const auto pairs = concat<S>({index_select(objects, 1, left), index_select(objects, 1, right)}, 2);
  const auto related = sum(relu(g2_(relu(g1_(pairs)))), 1);
  return head_(relu(f1_(related)));
}

template <typename S>
void RnModel<S>::collect(ParamList<S>& out) const {
  g1_.collect(out, "rn.g1");
  g2_.collect(out, "rn.g2");
  f1_.collect(out, "rn.f1");
  head_.collect(out, "rn.output");
}

// ----- TRN -----

template <typename S>
TrnModel<S>::TrnModel(std::size_t units, Rng& rng)
    : pair1_(2 * 129, 512, Init::Kaiming, rng),
      pair2_(512, 256, Init::Kaiming, rng),
      pair_fc_(256, 256, Init::Kaiming, rng),
      tri1_(3 * 129, 512, Init::Kaiming, rng),
      tri2_(512, 256, Init::Kaiming, rng),
      tri_fc_(256, 256, Init::Kaiming, rng),
      joint_(256, 256, Init::Kaiming, rng),
      head_(output_head<S>(256, units, rng)) {}

template <typename S>
Tensor<S> TrnModel<S>::forward(const Tensor<S>& z) const {
  check_sequence(z, "trn");
  const std::size_t b = z.size(0), t = z.size(1);
  const auto objects = append_position_tags(z);
  std::vector<std::size_t> p0, p1, q0, q1, q2;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) {
      p0.push_back(i);
      p1.push_back(j);
      for (std::size_t k = j + 1; k < t; ++k) {
        q0.push_back(i);
        q1.push_back(j);
        q2.push_back(k);
      }
    }
  }
  Tensor<S> pair_sum = Tensor<S>::zeros({b, 256});
  if (!p0.empty()) {
    const auto pairs = concat<S>({index_select(objects, 1, p0), index_select(objects, 1, p1)}, 2);
    pair_sum = sum(relu(pair2_(relu(pair1_(pairs)))), 1);
  }
  Tensor<S> tri_sum = Tensor<S>::zeros({b, 256});
  if (!q0.empty()) {
    const auto triples = concat<S>(
        {index_select(objects, 1, q0), index_select(objects, 1, q1), index_select(objects, 1, q2)}, 2);
    tri_sum = sum(relu(tri2_(relu(tri1_(triples)))), 1);
  }
  const auto joint = add(relu(pair_fc_(pair_sum)), relu(tri_fc_(tri_sum)));
  return head_(relu(joint_(joint)));
}

template <typename S>
void TrnModel<S>::collect(ParamList<S>& out) const {
  pair1_.collect(out, "trn.pair1");
  pair2_.collect(out, "trn.pair2");
  pair_fc_.collect(out, "trn.pair_fc");
  tri1_.collect(out, "trn.triple1");
  tri2_.collect(out, "trn.triple2");
  tri_fc_.collect(out, "trn.triple_fc");
  joint_.collect(out, "trn.joint");
  head_.collect(out, "trn.output");
}

// ----- Transformer -----

template <typename S>
TransformerModel<S>::TransformerModel(std::size_t units, Rng& rng)
    : q_(128, 128, Init::Xavier, rng),
      k_(128, 128, Init::Xavier, rng),
      v_(128, 128, Init::Xavier, rng),
      o_(128, 128, Init::Xavier, rng),
      ff1_(128, 512, Init::Kaiming, rng),
      ff2_(512, 128, Init::Kaiming, rng),
      hidden_(128, 256, Init::Kaiming, rng),
      head_(output_head<S>(256, units, rng)),
      ln1_g_(Tensor<S>::full({128}, S(1), true)),
      ln1_b_(Tensor<S>::zeros({128}, true)),
      ln2_g_(Tensor<S>::full({128}, S(1), true)),
      ln2_b_(Tensor<S>::zeros({128}, true)) {}

template <typename S>
Tensor<S> TransformerModel<S>::attend(const Tensor<S>& x, Tensor<S>* weights) const {
  const std::size_t b = x.size(0), t = x.size(1), d = x.size(2), hd = d / kHeads;
  auto split = [&](const Tensor<S>& y) {
    return reshape(permute(reshape(y, {b, t, kHeads, hd}), {0, 2, 1, 3}), {b * kHeads, t, hd});
  };
  const auto q = split(q_(x)), k = split(k_(x)), v = split(v_(x));
  const auto a = softmax(scale(bmm(q, k, true), static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)))));
  if (weights) *weights = a;
  const auto ctx = reshape(permute(reshape(bmm(a, v), {b, kHeads, t, hd}), {0, 2, 1, 3}), {b, t, d});
  return o_(ctx);
}

template <typename S>
Tensor<S> TransformerModel<S>::attention(const Tensor<S>& z) const {
  Tensor<S> w;
  attend(add(z, positional_encoding<S>(z.size(1), z.size(2))), &w);
  return w;
}

template <typename S>
Tensor<S> TransformerModel<S>::forward(const Tensor<S>& z) const {
  check_sequence(z, "transformer");
  auto x = add(z, positional_encoding<S>(z.size(1), z.size(2)));
  x = layer_norm(add(x, attend(x, nullptr)), ln1_g_, ln1_b_);
  x = layer_norm(add(x, ff2_(relu(ff1_(x)))), ln2_g_, ln2_b_);
  return head_(relu(hidden_(mean(x, 1))));
}

template <typename S>
void TransformerModel<S>::collect(ParamList<S>& out) const {
  q_.collect(out, "transformer.q");
  k_.collect(out, "transformer.k");
  v_.collect(out, "transformer.v");
  o_.collect(out, "transformer.o");
  out.push_back({"transformer.ln1.gain", ln1_g_});
  out.push_back({"transformer.ln1.bias", ln1_b_});
  ff1_.collect(out, "transformer.ff1");
  ff2_.collect(out, "transformer.ff2");
  out.push_back({"transformer.ln2.gain", ln2_g_});
  out.push_back({"transformer.ln2.bias", ln2_b_});
  hidden_.collect(out, "transformer.hidden");
  head_.collect(out, "transformer.output");
}

// ----- PrediNet -----

template <typename S>
PrediNetModel<S>::PrediNetModel(std::size_t steps, std::size_t units, Rng& rng)
    : steps_(steps),
      w_k_(init_xavier_normal<S>({kKey, 129}, 129, kKey, 1.0, rng)),
      w_q1_(init_xavier_normal<S>({kHeads * kKey, steps * 129}, steps * 129, kHeads * kKey, 1.0, rng)),
      w_q2_(init_xavier_normal<S>({kHeads * kKey, steps * 129}, steps * 129, kHeads * kKey, 1.0, rng)),
      w_s_(init_xavier_normal<S>({kRelations, 129}, 129, kRelations, 1.0, rng)),
      hidden_(kHeads * (kRelations + 2), 8, Init::Kaiming, rng),
      head_(output_head<S>(8, units, rng)) {}

template <typename S>
Tensor<S> PrediNetModel<S>::head_features(const Tensor<S>& z) const {
  check_sequence(z, "predinet");
  const std::size_t b = z.size(0), t = z.size(1);
  if (t != steps_) throw TensorError("predinet: built for " + std::to_string(steps_) + " steps, got " + std::to_string(t));
  const auto objects = append_position_tags(z);  // [B, T, 129]
  const Tensor<S> none;
  const auto keys = linear(objects, w_k_, none);   // [B, T, 16]
  const auto flat = reshape(objects, {b, t * 129});
  auto select = [&](const Tensor<S>& wq) {
    const auto queries = reshape(linear(flat, wq, none), {b, kHeads, kKey});
    return bmm(softmax(bmm(queries, keys, true)), objects);  // [B, 32, 129]
  };
  const auto e1 = select(w_q1_), e2 = select(w_q2_);
  const auto relation = sub(linear(e1, w_s_, none), linear(e2, w_s_, none));
  return concat<S>({relation, slice(e1, 2, 128, 1), slice(e2, 2, 128, 1)}, 2);
}

template <typename S>
Tensor<S> PrediNetModel<S>::forward(const Tensor<S>& z) const {
  const auto features = head_features(z);
  return head_(relu(hidden_(reshape(features, {z.size(0), kHeads * (kRelations + 2)}))));
}

template <typename S>
void PrediNetModel<S>::collect(ParamList<S>& out) const {
  out.push_back({"predinet.w_key", w_k_});
  out.push_back({"predinet.w_query1", w_q1_});
  out.push_back({"predinet.w_query2", w_q2_});
  out.push_back({"predinet.w_relation", w_s_});
  hidden_.collect(out, "predinet.hidden");
  head_.collect(out, "predinet.output");
}

#define ESBN_INSTANTIATE(S)                                                                                   \
  template Tensor<S> append_position_tags(const Tensor<S>&);                                                  \
  template Tensor<S> ntm_address(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                 const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> ntm_write(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template class LstmModel<S>;                                                                                \
  template class NtmModel<S>;                                                                                 \
  template class RnModel<S>;                                                                                  \
  template class TrnModel<S>;                                                                                 \
  template class TransformerModel<S>;                                                                         \
  template class PrediNetModel<S>;

ESBN_INSTANTIATE(float)
ESBN_INSTANTIATE(double)

}  // namespace esbn
