// nn.hpp
//
// Dense feed-forward networks with reverse-mode gradients and Adam.
//
// Parameters of a network live in one flat vector so that optimizers,
// hashing and serialization can treat them uniformly. Layer k owns a
// column-major weight block of shape (dims[k+1] x dims[k]) followed by a
// bias block of length dims[k+1]. Batched evaluation works on matrices whose
// columns are samples.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace genxfer {

enum class Activation : std::uint32_t { relu = 0, requ = 1, tanh = 2 };
enum class OutputActivation : std::uint32_t { identity = 0, scaled_tanh = 1 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Intermediate values of a batched forward pass, consumed by backward().
template <typename Scalar>
struct MlpTape {
  std::vector<MatrixX<Scalar>> inputs;  // input to layer k (post-activation)
  std::vector<MatrixX<Scalar>> pre;     // pre-activation of layer k
};

template <typename Scalar>
struct MlpGradients {
  VectorX<Scalar> params;
  VectorX<Scalar> input;
};

template <typename Scalar>
class BasicMlp {
 public:
  using Vector = VectorX<Scalar>;
  using Matrix = MatrixX<Scalar>;
  using WeightMap = Eigen::Map<const Matrix>;
  using BiasMap = Eigen::Map<const Vector>;

  BasicMlp() = default;

  /// All-zero network. Use init() to draw random weights.
  BasicMlp(std::vector<int> layer_dims, Activation hidden,
           OutputActivation output = OutputActivation::identity,
           Scalar output_bound = Scalar(1))
      : dims_(std::move(layer_dims)),
        hidden_(hidden),
        output_(output),
        bound_(output_bound) {
    if (dims_.size() < 2) {
      throw std::invalid_argument("mlp: need at least input and output dims");
    }
    for (int d : dims_) {
      if (d < 0) throw std::invalid_argument("mlp: negative layer dim");
    }
    if (dims_.back() < 1) throw std::invalid_argument("mlp: empty output");
    if (output_ == OutputActivation::scaled_tanh && !(bound_ > 0)) {
      throw std::invalid_argument("mlp: scaled_tanh bound must be positive");
    }
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
      offsets_.push_back(offset);
      offset += Eigen::Index(dims_[k + 1]) * (dims_[k] + 1);
    }
    params_ = Vector::Zero(offset);
  }

  /// He-uniform for relu/requ layers, Xavier-uniform for tanh and the
  /// identity/scaled_tanh head. Biases start at zero.
  void init(std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    for (int k = 0; k < num_layers(); ++k) {
      const bool last = k + 1 == num_layers();
      const double fan_in = std::max(1, dims_[k]);
      const double fan_out = std::max(1, dims_[k + 1]);
      const bool he = !last && hidden_ != Activation::tanh;
      const double limit = he ? std::sqrt(6.0 / fan_in)
                              : std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-limit, limit);
      auto w = weight_mut(k);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = Scalar(u(gen));
      bias_mut(k).setZero();
    }
  }

  int num_layers() const { return int(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& layer_dims() const { return dims_; }
  Activation hidden_activation() const { return hidden_; }
  OutputActivation output_activation() const { return output_; }
  Scalar output_bound() const { return bound_; }

  Eigen::Index num_params() const { return params_.size(); }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  WeightMap weight(int k) const {
    return WeightMap(params_.data() + offsets_[k], dims_[k + 1], dims_[k]);
  }
  BiasMap bias(int k) const {
    return BiasMap(params_.data() + offsets_[k] + Eigen::Index(dims_[k + 1]) * dims_[k],
                   dims_[k + 1]);
  }
  Eigen::Map<Matrix> weight_mut(int k) {
    return Eigen::Map<Matrix>(params_.data() + offsets_[k], dims_[k + 1], dims_[k]);
  }
  Eigen::Map<Vector> bias_mut(int k) {
    return Eigen::Map<Vector>(
        params_.data() + offsets_[k] + Eigen::Index(dims_[k + 1]) * dims_[k], dims_[k + 1]);
  }

  /// Optional max-norm clip on weights (biases untouched).
  void clip_weights(Scalar max_abs) {
    for (int k = 0; k < num_layers(); ++k) {
      auto w = weight_mut(k);
      w = w.cwiseMax(-max_abs).cwiseMin(max_abs);
    }
  }

  Vector forward(const Vector& x) const {
    check_input_rows(x.rows());
    Matrix out = forward(Matrix(x));
    return out.col(0);
  }

  Matrix forward(const Matrix& x) const {
    check_input_rows(x.rows());
    Matrix h = x;
    for (int k = 0; k < num_layers(); ++k) {
      Matrix z = weight(k) * h;
      z.colwise() += bias(k);
      h = (k + 1 == num_layers()) ? apply_output(z) : apply_hidden(z);
    }
    return h;
  }

  Matrix forward(const Matrix& x, MlpTape<Scalar>& tape) const {
    check_input_rows(x.rows());
    tape.inputs.resize(num_layers());
    tape.pre.resize(num_layers());
    Matrix h = x;
    for (int k = 0; k < num_layers(); ++k) {
      tape.inputs[k] = h;
      Matrix& z = tape.pre[k];
      z.noalias() = weight(k) * h;
      z.colwise() += bias(k);
      h = (k + 1 == num_layers()) ? apply_output(z) : apply_hidden(z);
    }
    return h;
  }

  /// Reverse pass for the batch recorded in tape. Parameter gradients of
  /// sum_columns <output, out_grad> are added to param_grad; the input
  /// gradient is returned.
  Matrix backward(const MlpTape<Scalar>& tape, const Matrix& out_grad,
                  Eigen::Ref<Vector> param_grad) const {
    if (int(tape.pre.size()) != num_layers()) {
      throw std::invalid_argument("mlp backward: tape does not match network");
    }
    if (out_grad.rows() != output_dim() || out_grad.cols() != tape.pre.back().cols()) {
      throw std::invalid_argument("mlp backward: output gradient shape mismatch");
    }
    if (param_grad.size() != num_params()) {
      throw std::invalid_argument("mlp backward: gradient buffer shape mismatch");
    }
    Matrix delta = out_grad;
    for (int k = num_layers() - 1; k >= 0; --k) {
      const Matrix& z = tape.pre[k];
      if (k + 1 == num_layers()) {
        if (output_ == OutputActivation::scaled_tanh) {
          delta.array() *= (Scalar(1) - (z.array() / bound_).tanh().square());
        }
      } else {
        delta.array() *= hidden_derivative(z).array();
      }
      Eigen::Map<Matrix> gw(param_grad.data() + offsets_[k], dims_[k + 1], dims_[k]);
      Eigen::Map<Vector> gb(param_grad.data() + offsets_[k] + Eigen::Index(dims_[k + 1]) * dims_[k],
                            dims_[k + 1]);
      gw.noalias() += delta * tape.inputs[k].transpose();
      gb += delta.rowwise().sum();
      Matrix next = weight(k).transpose() * delta;
      delta.swap(next);
    }
    return delta;
  }

  /// d output / d input at x, shape (output_dim x input_dim).
  Matrix input_jacobian(const Vector& x) const {
    MlpTape<Scalar> tape;
    forward(Matrix(x), tape);
    Matrix jac(output_dim(), input_dim());
    Vector scratch = Vector::Zero(num_params());
    for (int i = 0; i < output_dim(); ++i) {
      Matrix e = Matrix::Zero(output_dim(), 1);
      e(i, 0) = Scalar(1);
      jac.row(i) = backward(tape, e, scratch).col(0).transpose();
    }
    return jac;
  }

 private:
  void check_input_rows(Eigen::Index rows) const {
    if (rows != input_dim()) {
      throw std::invalid_argument("mlp: input has " + std::to_string(rows) +
                                  " rows, network expects " + std::to_string(input_dim()));
    }
  }

  Matrix apply_hidden(const Matrix& z) const {
    switch (hidden_) {
      case Activation::relu: return z.cwiseMax(Scalar(0));
      case Activation::requ: return z.cwiseMax(Scalar(0)).array().square().matrix();
      case Activation::tanh: return z.array().tanh().matrix();
    }
    return z;
  }

  Matrix hidden_derivative(const Matrix& z) const {
    switch (hidden_) {
      case Activation::relu: return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
      case Activation::requ: return (Scalar(2) * z.cwiseMax(Scalar(0)).array()).matrix();
      case Activation::tanh: return (Scalar(1) - z.array().tanh().square()).matrix();
    }
    return Matrix::Ones(z.rows(), z.cols());
  }

  Matrix apply_output(const Matrix& z) const {
    if (output_ == OutputActivation::scaled_tanh) {
      return (bound_ * (z.array() / bound_).tanh()).matrix();
    }
    return z;
  }

  std::vector<int> dims_;
  std::vector<Eigen::Index> offsets_;
  Activation hidden_ = Activation::relu;
  OutputActivation output_ = OutputActivation::identity;
  Scalar bound_ = Scalar(1);
  Vector params_;
};

using Mlp = BasicMlp<double>;

/// Recomputes the forward pass and returns gradients of <net(input), output_grad>.
template <typename Scalar>
MlpGradients<Scalar> mlp_backward(const BasicMlp<Scalar>& net, const VectorX<Scalar>& input,
                                  const VectorX<Scalar>& output_grad) {
  if (output_grad.size() != net.output_dim()) {
    throw std::invalid_argument("mlp_backward: output gradient length mismatch");
  }
  MlpTape<Scalar> tape;
  net.forward(MatrixX<Scalar>(input), tape);
  MlpGradients<Scalar> g;
  g.params = VectorX<Scalar>::Zero(net.num_params());
  g.input = net.backward(tape, MatrixX<Scalar>(output_grad), g.params).col(0);
  return g;
}

/// Hidden widths -> full layer_dims list.
inline std::vector<int> mlp_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

template <typename Scalar>
struct BasicAdamState {
  VectorX<Scalar> first_moment;
  VectorX<Scalar> second_moment;
  std::int64_t step_count = 0;
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);

  BasicAdamState() = default;
  BasicAdamState(Eigen::Index n, Scalar lr)
      : first_moment(VectorX<Scalar>::Zero(n)),
        second_moment(VectorX<Scalar>::Zero(n)),
        learning_rate(lr) {}
};

using AdamState = BasicAdamState<double>;

/// One bias-corrected Adam update in place.
template <typename Scalar>
void adam_step(Eigen::Ref<VectorX<Scalar>> params, const VectorX<Scalar>& grads,
               BasicAdamState<Scalar>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: buffers are not parameter-shaped");
  }
  if (!grads.allFinite()) {
    throw std::runtime_error("adam_step: non-finite gradient at step " +
                             std::to_string(state.step_count + 1));
  }
  ++state.step_count;
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
  const auto t = static_cast<Scalar>(state.step_count);
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.eps);
}

/// Central-difference gradient of a scalar loss. Test oracle.
template <typename Scalar>
VectorX<Scalar> finite_diff_grad(const std::function<Scalar(const VectorX<Scalar>&)>& loss,
                                 const VectorX<Scalar>& params, Scalar step) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  VectorX<Scalar> g(params.size());
  VectorX<Scalar> p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const Scalar orig = p[i];
    p[i] = orig + step;
    const Scalar up = loss(p);
    p[i] = orig - step;
    const Scalar down = loss(p);
    p[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_diff_grad: non-finite loss");
    }
    g[i] = (up - down) / (Scalar(2) * step);
  }
  return g;
}

/// FNV-1a over the raw parameter bytes. Bit-identical parameters give equal hashes.
template <typename Scalar>
std::uint64_t param_hash(const VectorX<Scalar>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params.data());
  const std::size_t n = std::size_t(params.size()) * sizeof(Scalar);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::requ: return "requ";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "requ") return Activation::requ;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

}  // namespace genxfer
