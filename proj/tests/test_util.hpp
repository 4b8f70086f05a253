#pragma once

#include <cmath>
#include <random>

#include "genxfer/nn.hpp"
#include "genxfer/types.hpp"

namespace testutil {

struct NetCase {
  genxfer::Mlp net;
  Eigen::VectorXd x;
  Eigen::VectorXd out_grad;
};

// Random small tanh/relu net with inputs kept away from relu kinks.
inline NetCase random_net(std::mt19937_64& gen, std::uniform_int_distribution<int>& dim,
                          std::uniform_int_distribution<int>& depth) {
  std::vector<int> dims{dim(gen)};
  const int hidden = depth(gen);
  for (int k = 0; k < hidden; ++k) dims.push_back(dim(gen));
  dims.push_back(dim(gen));
  const auto act = gen() % 2 ? genxfer::Activation::tanh : genxfer::Activation::relu;
  genxfer::Mlp net(dims, act);
  net.init(gen());
  std::normal_distribution<double> nd(0.0, 0.3);
  for (int k = 0; k < net.num_layers(); ++k)
    for (Eigen::Index i = 0; i < net.bias(k).size(); ++i) net.bias_mut(k)[i] = nd(gen);
  Eigen::VectorXd x(dims.front()), og(dims.back());
  for (auto& v : x) v = 2.0 * nd(gen);
  for (auto& v : og) v = nd(gen) / 0.3;
  return {std::move(net), x, og};
}

// Entries where analytic and numeric gradients disagree beyond rel/abs tolerance.
inline int count_grad_mismatches(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double rel, double abs) {
  int bad = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    if (diff > abs && diff > rel * std::max(std::abs(a[i]), std::abs(b[i]))) ++bad;
  }
  return bad;
}

}  // namespace testutil
