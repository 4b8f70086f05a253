// flows.hpp
//
// Coupling normalizing flows T: x -> v with exact log-determinants.
// A coupling layer keeps part1 fixed and maps part2 as
//   additive: x2 + t(x1, c)
//   affine:   x2 * exp(s(x1, c)) + t(x1, c),  s = B tanh(raw / B)
// so every layer is invertible in closed form. Reversal permutations sit
// between coupling layers so successive layers transform alternate halves.

#pragma once

#include <functional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "genxfer/nn.hpp"
#include "genxfer/training.hpp"
#include "genxfer/types.hpp"

namespace genxfer {

enum class CouplingKind : std::uint32_t { additive = 0, affine = 1 };
enum class BaseDensity : std::uint32_t { std_gaussian = 0, uniform_logit = 1 };

struct CouplingLayer {
  CouplingKind kind = CouplingKind::affine;
  std::vector<int> part1;
  std::vector<int> part2;
  Mlp omega;  // [x_part1; cond] -> t  (additive)  or  [t; raw_s]  (affine)
  double log_scale_bound = 5.0;
};

/// v[i] = x[perm[i]].
struct Permutation {
  std::vector<int> perm;
};

using FlowLayer = std::variant<CouplingLayer, Permutation>;

struct CouplingFlow {
  std::vector<FlowLayer> layers;
  int d_x = 0;
  int d_c = 0;
  BaseDensity base = BaseDensity::std_gaussian;

  Eigen::Index num_params() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
};

struct FlowArch {
  int coupling_layers = 6;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::relu;
  CouplingKind kind = CouplingKind::affine;
  double log_scale_bound = 5.0;
  BaseDensity base = BaseDensity::std_gaussian;
};

/// Alternating-half masks with reversal permutations in between. Coupling
/// nets start with a zero output layer, so a fresh flow is the identity.
CouplingFlow make_coupling_flow(int d_x, int d_c, const FlowArch& arch, std::uint64_t seed);

Permutation reversal_permutation(int d);

struct FlowOutput {
  SampleSet v;               // n x d_x
  Eigen::VectorXd log_det;   // n
};

/// Batched T(x, c). cond is n x d_c, 1 x d_c (shared) or empty.
FlowOutput flow_forward(const CouplingFlow& flow, const SampleSet& x, const SampleSet& cond = {});
/// Batched T^{-1}(v, c).
SampleSet flow_inverse(const CouplingFlow& flow, const SampleSet& v, const SampleSet& cond = {});

/// Analytic d T / d x at a single point.
Eigen::MatrixXd flow_jacobian(const CouplingFlow& flow, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& cond = {});

Eigen::VectorXd base_log_density(BaseDensity base, const SampleSet& v);
SampleSet base_sample(BaseDensity base, Eigen::Index n, int d, Rng& rng);

struct NllResult {
  double loss = 0.0;              // mean over rows
  Eigen::VectorXd param_grads;    // CouplingFlow::params() layout
  Eigen::MatrixXd cond_grads;     // n x d_c
};

/// Mean of -[log p_v(T(x_i, c_i)) + log|det grad T(x_i, c_i)|] with exact gradients.
NllResult nll_loss(const CouplingFlow& flow, const SampleSet& batch, const SampleSet& cond = {});

TrainTrace train_flow(CouplingFlow& flow, const SampleSet& data, const SampleSet& cond,
                      const TrainOptions& opts);

/// Base draws pushed through T^{-1}.
SampleSet flow_sample(const CouplingFlow& flow, const SampleSet& cond, Eigen::Index n, Rng& rng);

/// An invertible map with its Jacobian, for the zero-padding lift.
struct InvertibleMap {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> forward;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> inverse;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> jacobian;
};

InvertibleMap as_invertible_map(const CouplingFlow& flow);

struct LiftResult {
  Eigen::VectorXd y;       // first d coordinates of the 2d composite
  Eigen::MatrixXd jac;     // [I, 0] J3 J2 J1 [I; 0]
  Eigen::VectorXd padded;  // full 2d state after the third layer
};

/// Pads x with zeros and applies
///   phi1: (a, b) -> (a, b + T(a))
///   phi2: (a, b) -> (b, a)
///   phi3: (a, b) -> (a, b - T^{-1}(a))
/// so that (x, 0) -> (T(x), 0). Throws std::logic_error when the padding
/// block does not return to zero within tol, i.e. T and T^{-1} disagree.
LiftResult zero_pad_lift(const InvertibleMap& map, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& cond = {}, double tol = 1e-8);

/// Fixed ReQU network computing x * y as ((x+y)^2 - (x-y)^2) / 4.
Mlp requ_product_net();

}  // namespace genxfer
