#include "lens/task.hpp"

#include <random>

namespace lens {

Dataset generate_samples(const RegressionTask& task, std::size_t n, std::uint64_t stream) {
  const ToyNetwork teacher = build_toy_network(task.teacher);
  std::seed_seq seq{static_cast<std::uint32_t>(task.seed), static_cast<std::uint32_t>(task.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd(0.0, 1.0);
  Dataset out(n);
  for (auto& s : out) {
    s.x.resize(teacher.input_dim());
    for (auto& v : s.x) v = task.input_scale * nd(rng);
    const double noise = nd(rng);
    s.y = forward(teacher, s.x) + task.label_noise * noise;
  }
  return out;
}

ToyNetwork pretrain(const NetworkSpec& student, const RegressionTask& source, std::size_t n, double lr,
                    std::size_t steps) {
  const Dataset data = generate_samples(source, n);
  return train_sgd(build_toy_network(student), data, lr, steps).net.rebased();
}

}  // namespace lens
