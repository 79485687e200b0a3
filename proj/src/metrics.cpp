#include "lens/metrics.hpp"

#include "lens/error.hpp"
#include "lens/selection.hpp"

#include <algorithm>
#include <cmath>

namespace lens {

double pearson_corr(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("pearson: length mismatch");
  if (xs.size() < 2) throw InvalidArgument("pearson: need at least 2 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw InvalidArgument("pearson: undefined correlation (constant input)");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double relative_accuracy(double selected, const std::vector<double>& pool) {
  if (pool.size() < 2) throw InvalidArgument("relative accuracy: pool needs at least 2 entries");
  const auto [lo, hi] = std::minmax_element(pool.begin(), pool.end());
  if (!(*hi > *lo)) throw InvalidArgument("relative accuracy: degenerate pool (best equals worst)");
  const double tol = 1e-12 * (std::abs(*hi) + std::abs(*lo));
  if (selected < *lo - tol || selected > *hi + tol)
    throw InvalidArgument("relative accuracy: selected performance outside the pool range");
  return std::clamp((selected - *lo) / (*hi - *lo), 0.0, 1.0);
}

double rmse(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.size() != actual.size()) throw InvalidArgument("rmse: length mismatch");
  if (pred.empty()) throw InvalidArgument("rmse: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

double run_cost(const CostInputs& c) {
  if (c.epochs == 0 || c.hp_rounds == 0 || c.param_count == 0 || c.dataset_size == 0)
    throw InvalidArgument("cost: epochs, hp rounds, parameter count and dataset size must be >= 1");
  return 6.0 * static_cast<double>(c.epochs) * static_cast<double>(c.hp_rounds) *
         static_cast<double>(c.param_count) * static_cast<double>(c.dataset_size);
}

namespace {

void check_chain(const PoolMember& m) {
  const auto& s = m.executed_sizes;
  if (s.empty()) throw InvalidArgument("cost: model '" + m.model_id + "' has no executed sizes");
  if (s.front() > m.inputs.dataset_size)
    throw InvalidArgument("cost: model '" + m.model_id + "' trained above its dataset size");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] != s[i - 1] / 2 || s[i] == 0)
      throw InvalidArgument("cost: executed sizes of model '" + m.model_id + "' are not a halving chain");
}

}  // namespace

CostBreakdown method_cost(const MethodCostSpec& spec) {
  if (spec.method == CostMethod::SubTuning && !(spec.sub_fraction > 0.0 && spec.sub_fraction < 1.0))
    throw InvalidArgument("cost: SubTuning fraction must lie in (0, 1)");
  CostBreakdown out;
  for (const auto& m : spec.pool) {
    double c = 0.0;
    switch (spec.method) {
      case CostMethod::FullTuning: c = run_cost(m.inputs); break;
      case CostMethod::SubTuning: c = spec.sub_fraction * run_cost(m.inputs); break;
      case CostMethod::LensLLM:
        check_chain(m);
        for (auto size : m.executed_sizes) {
          CostInputs step = m.inputs;
          step.dataset_size = size;
          c += run_cost(step);
        }
        break;
    }
    out.per_model.emplace_back(m.model_id, c);
    out.total += c;
  }
  return out;
}

std::vector<std::uint64_t> executed_sizes(const SelectionReport& report) {
  std::vector<std::uint64_t> out;
  out.reserve(report.trace.size());
  for (const auto& t : report.trace) out.push_back(t.size);
  return out;
}

std::vector<std::uint64_t> halving_chain(std::uint64_t start, std::uint64_t floor) {
  if (start == 0 || floor == 0 || start < floor) throw InvalidArgument("halving chain: need start >= floor >= 1");
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = start; s >= floor && s > 0; s /= 2) out.push_back(s);
  return out;
}

std::vector<CostPoint> pareto_front(const std::vector<CostPoint>& points) {
  if (points.empty()) throw InvalidArgument("pareto: empty input");
  std::vector<CostPoint> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      const auto& p = points[i];
      const auto& q = points[j];
      dominated = q.cost <= p.cost && q.performance >= p.performance &&
                  (q.cost < p.cost || q.performance > p.performance);
    }
    if (!dominated) out.push_back(points[i]);
  }
  std::stable_sort(out.begin(), out.end(), [](const CostPoint& a, const CostPoint& b) { return a.cost < b.cost; });
  return out;
}

const char* to_string(CostMethod method) {
  switch (method) {
    case CostMethod::FullTuning: return "full";
    case CostMethod::SubTuning: return "sub";
    case CostMethod::LensLLM: return "lens";
  }
  return "?";
}

CostMethod cost_method_from_string(const std::string& name) {
  if (name == "full") return CostMethod::FullTuning;
  if (name == "sub") return CostMethod::SubTuning;
  if (name == "lens") return CostMethod::LensLLM;
  throw InvalidArgument("unknown cost method '" + name + "' (expected full, sub or lens)");
}

}  // namespace lens
