#pragma once

// Teacher-student regression tasks used for toy pre-training and fine-tuning.

#include "lens/network.hpp"

#include <cstdint>

namespace lens {

struct RegressionTask {
  NetworkSpec teacher;  // labels are teacher outputs
  double label_noise = 0.0;
  double input_scale = 1.0;
  std::uint64_t seed = 0;
};

/// n samples with x ~ N(0, input_scale^2 I) and y = teacher(x) + N(0, noise^2).
/// Samples are drawn sequentially, so a smaller n yields a prefix of a larger one.
Dataset generate_samples(const RegressionTask& task, std::size_t n, std::uint64_t stream = 0);

/// Trains a freshly initialized student on `n` source samples and snapshots
/// the result as its pretrained weights.
ToyNetwork pretrain(const NetworkSpec& student, const RegressionTask& source, std::size_t n, double lr,
                    std::size_t steps);

}  // namespace lens
