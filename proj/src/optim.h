#ifndef UAP_SRC_OPTIM_H_
#define UAP_SRC_OPTIM_H_

#include <cmath>
#include <cstddef>
#include <vector>

#include "uap/models.h"

namespace uap::internal {

// First-order update for one contiguous parameter block.
class BlockOptimizer {
 public:
  BlockOptimizer(const TrainConfig& cfg, std::size_t size)
      : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  void Step(double* params, const double* grad) {
    ++t_;
    const std::size_t n = m_.size();
    if (cfg_.optimizer == Optimizer::kSgd) {
      for (std::size_t i = 0; i < n; ++i) params[i] -= cfg_.learning_rate * grad[i];
      return;
    }
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    const double step = cfg_.learning_rate * std::sqrt(c2) / c1;
    const double eps = cfg_.adam_epsilon * std::sqrt(c2);
    for (std::size_t i = 0; i < n; ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

// Shuffled minibatch index lists for one epoch, deterministic in (seed, epoch).
std::vector<std::vector<std::size_t>> EpochBatches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   int epoch);

TrainingBatch GatherBatch(const LabeledDataset& data,
                          const std::vector<std::size_t>& rows);

// log(1 + exp(z)) without overflow.
inline double Softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace uap::internal

#endif  // UAP_SRC_OPTIM_H_
