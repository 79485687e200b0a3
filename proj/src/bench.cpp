#include "lens/bench.hpp"

#include "lens/error.hpp"
#include "lens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace lens {

std::vector<std::uint64_t> doubling_sizes(std::uint64_t first, std::uint64_t last) {
  if (first == 0 || last < first) throw InvalidArgument("doubling sizes: need 1 <= first <= last");
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = first; s <= last; s *= 2) {
    out.push_back(s);
    if (s > last / 2) break;
  }
  return out;
}

LossCurve generate_curve(const CurveGenSpec& spec) {
  if (spec.sizes.empty()) throw InvalidArgument("generate curve: no sizes");
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    if (spec.sizes[i] == 0) throw InvalidArgument("generate curve: sizes must be positive");
    if (i > 0 && spec.sizes[i] <= spec.sizes[i - 1])
      throw InvalidArgument("generate curve: sizes must be strictly increasing");
  }
  const SyntheticProvider provider(spec.true_params, spec.log_noise_sigma, spec.seed);
  std::vector<LossObservation> obs;
  obs.reserve(spec.sizes.size());
  for (std::uint64_t s : spec.sizes) obs.push_back({s, *provider.evaluate({s, {}}), std::nullopt});
  return make_curve(spec.model_id, std::move(obs));
}

namespace {

void check_range(const ParamRange& r, const char* name, bool positive) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (positive && !(r.lo > 0.0)) ||
      (!positive && r.lo < 0.0))
    throw InvalidArgument(std::string("generate pool: degenerate range for ") + name);
}

double draw_uniform(std::mt19937_64& rng, const ParamRange& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double draw_log_uniform(std::mt19937_64& rng, const ParamRange& r) {
  return std::exp(std::uniform_real_distribution<double>(std::log(r.lo), std::log(r.hi))(rng));
}

}  // namespace

GeneratedPool generate_pool(const PoolGenSpec& spec) {
  if (spec.n_models < 2) throw InvalidArgument("generate pool: need at least 2 models");
  if (spec.d_full == 0) throw InvalidArgument("generate pool: d_full must be positive");
  if (!(spec.log_noise_sigma >= 0.0)) throw InvalidArgument("generate pool: noise must be nonnegative");
  check_range(spec.B, "B", true);
  check_range(spec.E, "E", false);
  check_range(spec.beta, "beta", true);
  check_range(spec.F0, "F0", false);
  check_range(spec.param_count, "param_count", true);
  const bool fixed = spec.B.lo == spec.B.hi && spec.E.lo == spec.E.hi && spec.beta.lo == spec.beta.hi &&
                     spec.F0.lo == spec.F0.hi;
  if (fixed) throw InvalidArgument("generate pool: every parameter range is a single point");

  std::mt19937_64 rng(spec.seed);
  GeneratedPool out;
  out.pool.d_full = spec.d_full;
  for (std::size_t m = 0; m < spec.n_models; ++m) {
    RectifiedParams p;
    p.B = draw_log_uniform(rng, spec.B);
    p.E = draw_uniform(rng, spec.E);
    p.beta = draw_uniform(rng, spec.beta);
    const double f0 = spec.F0.lo > 0.0 ? draw_log_uniform(rng, spec.F0) : draw_uniform(rng, spec.F0);
    p.f_mode = SurrogateF{f0, 0.0};
    const auto n = static_cast<std::uint64_t>(std::llround(draw_log_uniform(rng, spec.param_count)));

    Candidate c;
    c.model_id = "m" + std::to_string(m);
    c.param_count = std::max<std::uint64_t>(1, n);
    c.provider = std::make_shared<SyntheticProvider>(p, spec.log_noise_sigma, spec.seed * 1000003u + m + 1);
    c.ground_truth = predict_rectified(p, static_cast<double>(spec.d_full));
    out.pool.models.push_back(std::move(c));
    out.truth.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

ToyTrainerProvider::ToyTrainerProvider(ToyNetwork pretrained, Dataset train, Dataset test, ToyTrainConfig config)
    : pretrained_(std::move(pretrained)), train_(std::move(train)), test_(std::move(test)), config_(config) {
  if (test_.empty()) throw InvalidArgument("toy trainer: empty test set");
  if (!(config_.lr > 0.0)) throw InvalidArgument("toy trainer: learning rate must be positive");
}

std::optional<double> ToyTrainerProvider::evaluate(const TrainingSubset& subset) const {
  if (subset.size == 0) return std::nullopt;
  if (subset.size > train_.size())
    throw InvalidArgument("toy trainer: size " + std::to_string(subset.size) + " exceeds the " +
                          std::to_string(train_.size()) + " training samples");
  Dataset data;
  data.reserve(subset.size);
  if (subset.indices.empty()) {
    data.assign(train_.begin(), train_.begin() + static_cast<std::ptrdiff_t>(subset.size));
  } else {
    if (subset.indices.size() != subset.size) throw InvalidArgument("toy trainer: index count does not match size");
    for (std::uint64_t i : subset.indices) data.push_back(train_.at(i));
  }

  ToyNetwork net = pretrained_;
  const std::size_t batch = config_.batch_size;
  if (batch == 0 || batch >= data.size()) {
    net = train_sgd(std::move(net), data, config_.lr, config_.steps).net;
  } else {
    std::size_t cursor = 0;
    Dataset mini(batch);
    for (std::size_t k = 0; k < config_.steps; ++k) {
      for (std::size_t j = 0; j < batch; ++j) mini[j] = data[(cursor + j) % data.size()];
      cursor = (cursor + batch) % data.size();
      net = train_sgd(std::move(net), mini, config_.lr, 1).net;
    }
  }
  return mean_squared_error(net, test_);
}

std::pair<Dataset, Dataset> split_task_data(const RegressionTask& task, std::size_t train_size,
                                            double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("split: test fraction must be in (0, 1)");
  if (train_size == 0) throw InvalidArgument("split: empty training set");
  const auto test_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(train_size) * test_fraction / (1.0 - test_fraction))));
  Dataset all = generate_samples(task, train_size + test_size, seed);
  Dataset test(all.begin() + static_cast<std::ptrdiff_t>(train_size), all.end());
  all.resize(train_size);
  return {std::move(all), std::move(test)};
}

LossCurve toy_finetune_curve(const ToyNetwork& pretrained, const RegressionTask& target,
                             const std::vector<std::uint64_t>& sizes, const ToyTrainConfig& config,
                             std::uint64_t seed, std::string model_id) {
  if (sizes.empty()) throw InvalidArgument("toy curve: no sizes");
  if (std::find(sizes.begin(), sizes.end(), 0u) != sizes.end())
    throw InvalidArgument("toy curve: sizes must be positive");
  const std::uint64_t largest = *std::max_element(sizes.begin(), sizes.end());
  auto [train, test] = split_task_data(target, largest, config.test_fraction, seed);
  const ToyTrainerProvider provider(pretrained, std::move(train), std::move(test), config);

  std::vector<std::uint64_t> ordered = sizes;
  std::sort(ordered.begin(), ordered.end());
  std::vector<LossObservation> obs;
  for (std::uint64_t s : ordered) {
    try {
      obs.push_back({s, *provider.evaluate({s, {}}),
                     config.steps > 0 ? std::optional<std::uint64_t>(config.steps) : std::nullopt});
    } catch (const TrainingDiverged& e) {
      throw CurveGenerationFailed("toy curve: training diverged at size " + std::to_string(s) + ": " + e.what(),
                                  obs.empty() ? LossCurve{model_id, {}} : make_curve(model_id, obs));
    }
  }
  return make_curve(std::move(model_id), std::move(obs));
}

CandidatePool make_toy_pool(const ToyPoolSpec& spec) {
  if (spec.models.empty()) throw InvalidArgument("toy pool: no models");
  if (spec.d_full == 0) throw InvalidArgument("toy pool: d_full must be positive");
  auto [train, test] = split_task_data(spec.target, spec.d_full, spec.train.test_fraction, spec.seed);
  CandidatePool pool;
  pool.d_full = spec.d_full;
  for (const auto& m : spec.models) {
    auto provider = std::make_shared<ToyTrainerProvider>(m.pretrained, train, test, spec.train);
    Candidate c;
    c.model_id = m.model_id;
    c.param_count = m.pretrained.param_count();
    c.ground_truth = provider->evaluate({spec.d_full, {}});
    c.provider = std::move(provider);
    pool.models.push_back(std::move(c));
  }
  validate(pool);
  return pool;
}

// ---------------------------------------------------------------------------

PoolScore score_selection(const CandidatePool& pool, const std::vector<SelectionReport>& reports) {
  if (reports.size() != pool.models.size()) throw InvalidArgument("score: one report per candidate required");
  std::vector<double> pred, truth, perf;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& gt = pool.models[i].ground_truth;
    if (!gt) throw InvalidArgument("score: candidate '" + pool.models[i].model_id + "' has no ground truth");
    pred.push_back(reports[i].predicted_score);
    truth.push_back(*gt);
    perf.push_back(-*gt);
  }
  PoolScore s;
  s.pearson = pearson_corr(pred, truth);
  const Ranking ranking = rank_pool(reports, Polarity::LossLike);
  for (std::size_t i = 0; i < reports.size(); ++i)
    if (reports[i].model_id == ranking.selected) s.relative_accuracy = relative_accuracy(perf[i], perf);
  return s;
}

namespace {

std::uint64_t cell_seed(std::uint64_t base, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  return rng();
}

void run_cell(const CandidatePool& pool, const SelectionConfig& cfg, SweepCell& cell) {
  try {
    const PoolScore s = score_selection(pool, select_pool(pool, cfg));
    cell.pearson = s.pearson;
    cell.relative_accuracy = s.relative_accuracy;
  } catch (const Error& e) {
    cell.error = e.what();
  }
}

void check_grid(const SweepSpec& spec) {
  if (spec.gammas.empty() || spec.taus.empty()) throw InvalidArgument("sweep: gamma and tau lists must be nonempty");
}

}  // namespace

SweepTable ablation_sweep(const CandidatePool& pool, const SweepSpec& spec) {
  check_grid(spec);
  validate(pool);
  SweepTable t;
  t.gammas = spec.gammas;
  t.taus = spec.taus;
  for (std::size_t g : spec.gammas) {
    for (double tau : spec.taus) {
      SweepCell cell;
      cell.gamma = g;
      cell.tau = tau;
      SelectionConfig cfg = spec.base;
      cfg.gamma = g;
      cfg.tau = tau;
      cfg.seed = cell_seed(spec.base.seed, t.cells.size());
      run_cell(pool, cfg, cell);
      t.cells.push_back(std::move(cell));
    }
  }
  return t;
}

SweepTable ablation_sweep(const ToyPoolSpec& pool_spec, const SweepSpec& spec, const std::vector<double>& lrs,
                          const std::vector<std::size_t>& batch_sizes) {
  check_grid(spec);
  if (lrs.empty() || batch_sizes.empty()) throw InvalidArgument("sweep: lr and batch lists must be nonempty");
  SweepTable t;
  t.gammas = spec.gammas;
  t.taus = spec.taus;
  t.lrs = lrs;
  t.batch_sizes = batch_sizes;
  std::vector<std::optional<CandidatePool>> pools;
  std::vector<std::string> pool_errors;
  for (double lr : lrs) {
    for (std::size_t b : batch_sizes) {
      ToyPoolSpec ps = pool_spec;
      ps.train.lr = lr;
      ps.train.batch_size = b;
      try {
        pools.emplace_back(make_toy_pool(ps));
        pool_errors.emplace_back();
      } catch (const Error& e) {
        pools.emplace_back(std::nullopt);
        pool_errors.emplace_back(e.what());
      }
    }
  }
  for (std::size_t g : spec.gammas) {
    for (double tau : spec.taus) {
      for (std::size_t li = 0; li < lrs.size(); ++li) {
        for (std::size_t bi = 0; bi < batch_sizes.size(); ++bi) {
          const std::size_t pi = li * batch_sizes.size() + bi;
          SweepCell cell;
          cell.gamma = g;
          cell.tau = tau;
          cell.lr = lrs[li];
          cell.batch_size = batch_sizes[bi];
          SelectionConfig cfg = spec.base;
          cfg.gamma = g;
          cfg.tau = tau;
          cfg.seed = cell_seed(spec.base.seed, t.cells.size());
          if (pools[pi]) {
            run_cell(*pools[pi], cfg, cell);
          } else {
            cell.error = pool_errors[pi];
          }
          t.cells.push_back(std::move(cell));
        }
      }
    }
  }
  return t;
}

std::optional<double> pearson_spread(const SweepTable& table) {
  std::optional<double> lo, hi;
  for (const auto& c : table.cells) {
    if (!c.pearson) continue;
    lo = lo ? std::min(*lo, *c.pearson) : *c.pearson;
    hi = hi ? std::max(*hi, *c.pearson) : *c.pearson;
  }
  if (!lo) return std::nullopt;
  return *hi - *lo;
}

}  // namespace lens
