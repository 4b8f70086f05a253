// training.hpp
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "genxfer/types.hpp"

namespace genxfer {

struct TrainOptions {
  int epochs = 50;
  int batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  // Block gradients into the conditioning embedding (transfer regime).
  bool freeze_cond_net = false;
  // Exponential moving average of the iterates, swapped in after the last
  // epoch. 0 keeps the final iterate.
  double ema_decay = 0.999;
  // Flow NLL minibatch gradients are rescaled to at most this L2 norm
  // (0 disables). Score-matching gradients are never clipped.
  double grad_clip = 20.0;
};

/// Factor that brings a gradient of norm `norm` down to `max_norm`; 1 when
/// already short enough or max_norm <= 0.
inline double clip_factor(double norm, double max_norm) {
  return max_norm > 0.0 && norm > max_norm ? max_norm / norm : 1.0;
}

/// Running average with warm-up: the effective decay is
/// min(decay, (1 + t) / (10 + t)) at update t.
class ParamEma {
 public:
  explicit ParamEma(double decay) : decay_(decay) {}
  bool enabled() const { return decay_ > 0.0; }
  void update(const Eigen::VectorXd& params) {
    if (!enabled()) return;
    if (steps_ == 0) {
      avg_ = params;
    } else {
      const double t = double(steps_);
      const double d = std::min(decay_, (1.0 + t) / (10.0 + t));
      avg_ = d * avg_ + (1.0 - d) * params;
    }
    ++steps_;
  }
  /// The average, or `params` unchanged when disabled or never updated.
  const Eigen::VectorXd& value_or(const Eigen::VectorXd& params) const {
    return enabled() && steps_ > 0 ? avg_ : params;
  }

 private:
  double decay_;
  long steps_ = 0;
  Eigen::VectorXd avg_;
};

struct TrainTrace {
  std::vector<double> epoch_loss;  // row-weighted mean of minibatch losses
};

using BatchStep = std::function<double(const std::vector<Eigen::Index>& rows)>;

/// Shuffled minibatch epochs over n rows. step() computes the batch loss and
/// applies its own parameter updates. Throws on a non-finite batch loss.
TrainTrace run_epochs(Eigen::Index n, const TrainOptions& opts, Rng& rng, const BatchStep& step);

}  // namespace genxfer
