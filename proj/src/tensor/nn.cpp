#include "esbn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace esbn {

template <typename S>
Tensor<S> init_kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
  if (fan_in == 0) throw std::invalid_argument("init_kaiming_normal: fan_in must be positive");
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(rng.normal() * std_dev);
  return Tensor<S>::from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename S>
Tensor<S> init_xavier_normal(Shape shape, std::size_t fan_in, std::size_t fan_out, double gain, Rng& rng,
                             bool requires_grad) {
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("init_xavier_normal: fans must be positive");
  const double std_dev = gain * std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(rng.normal() * std_dev);
  return Tensor<S>::from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename S>
Linear<S>::Linear(std::size_t in, std::size_t out, Init init, Rng& rng, double gain, bool trainable) {
  weight = init == Init::Kaiming ? init_kaiming_normal<S>({out, in}, in, rng, trainable)
                                 : init_xavier_normal<S>({out, in}, in, out, gain, rng, trainable);
  bias = Tensor<S>::zeros({out}, trainable);
}

template <typename S>
void Linear<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

namespace {

// Fills a [4H, fan_in] block-row matrix; the candidate block (rows 2H..3H) gets gain 5/3.
template <typename S>
Tensor<S> lstm_weight(std::size_t hidden, std::size_t fan_in, Rng& rng) {
  std::vector<S> data;
  data.reserve(4 * hidden * fan_in);
  for (std::size_t gate = 0; gate < 4; ++gate) {
    const double gain = gate == 2 ? 5.0 / 3.0 : 1.0;
    auto block = init_xavier_normal<S>({hidden, fan_in}, fan_in, hidden, gain, rng, false);
    data.insert(data.end(), block.data().begin(), block.data().end());
  }
  return Tensor<S>::from_data({4 * hidden, fan_in}, std::move(data), true);
}

}  // namespace

template <typename S>
LstmCell<S>::LstmCell(std::size_t input, std::size_t hidden, Rng& rng)
    : w_ih(lstm_weight<S>(hidden, input, rng)),
      w_hh(lstm_weight<S>(hidden, hidden, rng)),
      bias(Tensor<S>::zeros({4 * hidden}, true)) {}

template <typename S>
typename LstmCell<S>::State LstmCell<S>::zero_state(std::size_t batch) const {
  return {Tensor<S>::zeros({batch, hidden_size()}), Tensor<S>::zeros({batch, hidden_size()})};
}

template <typename S>
typename LstmCell<S>::State LstmCell<S>::step(const Tensor<S>& x, const State& state) const {
  const std::size_t hidden = hidden_size();
  if (x.dim() != 2 || x.size(1) != input_size()) {
    throw TensorError("lstm_cell: input " + shape_str(x.shape()) + " does not match input size " +
                      std::to_string(input_size()));
  }
  if (state.h.shape() != Shape{x.size(0), hidden} || state.c.shape() != Shape{x.size(0), hidden}) {
    throw TensorError("lstm_cell: state shape does not match [batch, " + std::to_string(hidden) + "]");
  }
  const auto gates = add(linear(x, w_ih, bias), linear(state.h, w_hh, Tensor<S>()));
  const auto i = sigmoid(slice(gates, 1, 0, hidden));
  const auto f = sigmoid(slice(gates, 1, hidden, hidden));
  const auto g = tanh(slice(gates, 1, 2 * hidden, hidden));
  const auto o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  auto c = add(mul(f, state.c), mul(i, g));
  auto h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

template <typename S>
void LstmCell<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_ih", w_ih});
  out.push_back({prefix + ".w_hh", w_hh});
  out.push_back({prefix + ".bias", bias});
}

template <typename S>
Adam<S>::Adam(ParamList<S> params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

template <typename S>
void Adam<S>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (auto g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++step_count_;
  const auto t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto tensor = params_[k].tensor;
    auto values = tensor.mutable_data();
    const bool has = tensor.has_grad();
    const auto grad = tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) : 0.0;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] = static_cast<S>(static_cast<double>(values[i]) -
                                 options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon));
    }
  }
  zero_grad();
}

template <typename S>
void Adam<S>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs, double eps,
                  double floor) {
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw std::invalid_argument("grad_check: inputs must require grad");
    x.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) {
    analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                       : std::vector<double>(x.numel(), 0.0));
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = f().item();
      values[i] = original - eps;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& x : inputs) x.zero_grad();
  return worst;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x, double eps) {
  return grad_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, eps);
}

template Tensor<float> init_kaiming_normal<float>(Shape, std::size_t, Rng&, bool);
template Tensor<double> init_kaiming_normal<double>(Shape, std::size_t, Rng&, bool);
template Tensor<float> init_xavier_normal<float>(Shape, std::size_t, std::size_t, double, Rng&, bool);
template Tensor<double> init_xavier_normal<double>(Shape, std::size_t, std::size_t, double, Rng&, bool);
template struct Linear<float>;
template struct Linear<double>;
template struct LstmCell<float>;
template struct LstmCell<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace esbn
