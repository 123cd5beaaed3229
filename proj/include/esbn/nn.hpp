#pragma once

// Parameter initializers, layers shared by the models, and the ADAM optimizer.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "esbn/ops.hpp"
#include "esbn/random.hpp"
#include "esbn/tensor.hpp"

namespace esbn {

/// N(0, 2 / fan_in).
template <typename S>
Tensor<S> init_kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad = true);

/// N(0, gain^2 * 2 / (fan_in + fan_out)).
template <typename S>
Tensor<S> init_xavier_normal(Shape shape, std::size_t fan_in, std::size_t fan_out, double gain, Rng& rng,
                             bool requires_grad = true);

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

/// Total element count over a parameter list.
template <typename S>
std::size_t count_parameters(const ParamList<S>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

enum class Init { Kaiming, Xavier };

template <typename S>
struct Linear {
  Tensor<S> weight;  // [out, in]
  Tensor<S> bias;    // [out], zero-initialized

  Linear() = default;
  /// Kaiming uses fan_in = in; Xavier uses the given gain.
  Linear(std::size_t in, std::size_t out, Init init, Rng& rng, double gain = 1.0, bool trainable = true);

  std::size_t in_features() const { return weight.size(1); }
  std::size_t out_features() const { return weight.size(0); }

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Single-layer LSTM cell, gate order (input, forget, candidate, output).
///
/// Candidate ("cell input") rows of the input and recurrent weights use
/// Xavier gain 5/3; gate rows use gain 1. Biases start at zero.
template <typename S>
struct LstmCell {
  Tensor<S> w_ih;  // [4H, in]
  Tensor<S> w_hh;  // [4H, H]
  Tensor<S> bias;  // [4H]

  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, Rng& rng);

  std::size_t input_size() const { return w_ih.size(1); }
  std::size_t hidden_size() const { return w_hh.size(1); }

  struct State {
    Tensor<S> h;  // [B, H]
    Tensor<S> c;  // [B, H]
  };

  State zero_state(std::size_t batch) const;
  /// x [B, in] -> next state.
  State step(const Tensor<S>& x, const State& state) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// ADAM with bias correction.
template <typename S>
class Adam {
 public:
  struct Options {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(ParamList<S> params, Options options);

  /// Applies one update from the accumulated gradients (missing grads count as
  /// zero), then clears them. Throws naming the parameter on a non-finite grad.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_count_; }
  const Options& options() const { return options_; }
  const ParamList<S>& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamList<S> params_;
  Options options_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Max over elements of |analytic - central difference| / max(|a|, |n|, floor)
/// for a scalar function of the given leaf tensors. Inputs must require grad.
/// Central differences of an O(1) loss carry ~1e-11 absolute rounding error,
/// so whole-model checks use floor 1e-6.
double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs, double eps = 1e-5,
                  double floor = 1e-8);

/// Single-input convenience form.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                  double eps = 1e-5);

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LstmCell<float>;
extern template struct LstmCell<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace esbn
