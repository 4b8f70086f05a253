#include "genxfer/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace genxfer {

TrainTrace run_epochs(Eigen::Index n, const TrainOptions& opts, Rng& rng, const BatchStep& step) {
  if (n <= 0) throw std::invalid_argument("training: empty data");
  if (opts.batch_size <= 0) throw std::invalid_argument("training: batch_size must be positive");
  if (opts.epochs < 0) throw std::invalid_argument("training: negative epoch count");

  TrainTrace trace;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::vector<Eigen::Index> rows;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (Eigen::Index start = 0; start < n; start += opts.batch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + opts.batch_size);
      rows.assign(order.begin() + start, order.begin() + stop);
      const double loss = step(rows);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged: non-finite loss in epoch " +
                                 std::to_string(epoch));
      }
      total += loss * double(stop - start);
    }
    trace.epoch_loss.push_back(total / double(n));
  }
  return trace;
}

}  // namespace genxfer
