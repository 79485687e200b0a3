#include "lens/cli.hpp"

#include "lens/bench.hpp"
#include "lens/bound.hpp"
#include "lens/fit.hpp"
#include "lens/io.hpp"
#include "lens/metrics.hpp"
#include "lens/selection.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>

namespace lens {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string format = "json";
  bool quiet = false;
};

Format by_extension(const fs::path& p) { return p.extension() == ".csv" ? Format::CSV : Format::JSON; }

std::string ext(Format f) { return f == Format::CSV ? ".csv" : ".json"; }

/// Reads a named input and records its hash for the manifest.
struct Inputs {
  std::vector<RunInput> list;
  std::string read(const std::string& name, const fs::path& path) {
    std::string bytes = read_file(path);
    list.push_back({name, sha256_hex(bytes)});
    return bytes;
  }
};

RunConfig load_config(const std::string& path, Inputs& inputs, const Globals& g) {
  RunConfig c = path.empty() ? RunConfig{} : parse_run_config(inputs.read("config", path));
  if (g.seed) {
    c.seed = *g.seed;
    c.fit.seed = c.seed;
    c.selection.seed = c.seed;
    c.selection.fit.seed = c.seed;
  }
  return c;
}

std::optional<fs::path> resolve_out(const std::string& flag, const RunConfig& config) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv("LENS_OUT_DIR"); env && *env) return fs::path(env);
  if (!config.out_dir.empty()) return fs::path(config.out_dir);
  return std::nullopt;
}

fs::path require_out(const std::string& flag, const RunConfig& config, const std::string& command) {
  auto out = resolve_out(flag, config);
  if (!out) throw InvalidArgument(command + ": no output directory (pass --out or set LENS_OUT_DIR)");
  return *out;
}

fs::path open_run(const fs::path& out_dir, const std::string& command, const RunConfig& config,
                  const Inputs& inputs) {
  RunManifest m;
  m.command = command;
  m.config_hash = sha256_hex(write_run_config(config));
  m.seed = config.seed;
  m.inputs = inputs.list;
  m.versions = component_versions();
  m.run_id = make_run_id(command, m.config_hash, m.seed, m.inputs);
  return create_run_dir(out_dir, m);
}

std::optional<double> try_value(auto&& f) {
  try {
    return f();
  } catch (const InvalidArgument&) {
    return std::nullopt;
  }
}

/// Pearson and RMSE of pred vs actual; RelAcc of the best-predicted model.
MetricsReport compare(const std::map<std::string, double>& pred, const std::map<std::string, double>& actual,
                      Polarity polarity) {
  std::vector<double> p, a;
  std::vector<std::string> ids;
  for (const auto& [id, v] : pred) {
    const auto it = actual.find(id);
    if (it == actual.end()) throw InvalidArgument("metrics: no actual value for '" + id + "'");
    ids.push_back(id);
    p.push_back(v);
    a.push_back(it->second);
  }
  if (actual.size() != pred.size()) throw InvalidArgument("metrics: actual values include models without predictions");
  MetricsReport m;
  m.n = p.size();
  m.rmse = rmse(p, a);
  m.pearson = try_value([&] { return pearson_corr(p, a); });
  const double sign = polarity == Polarity::LossLike ? -1.0 : 1.0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (sign * p[i] > sign * p[best] || (sign * p[i] == sign * p[best] && ids[i] < ids[best])) best = i;
  std::vector<double> perf;
  for (double v : a) perf.push_back(sign * v);
  m.relative_accuracy = try_value([&] { return relative_accuracy(perf[best], perf); });
  return m;
}

void print_table(std::ostream& out, const Ranking& r) {
  out << std::left << std::setw(6) << "rank" << std::setw(24) << "model_id" << "score\n";
  for (std::size_t i = 0; i < r.entries.size(); ++i)
    out << std::setw(6) << i + 1 << std::setw(24) << r.entries[i].model_id << std::setprecision(10)
        << r.entries[i].score << "\n";
}

// ---------------------------------------------------------------------------
// Commands

struct FitArgs {
  std::string curves, config, model, out;
};

void cmd_fit(const FitArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config(a.config, in, g);
  auto curves = parse_curves(in.read("curves", a.curves), by_extension(a.curves));
  if (!a.model.empty()) {
    std::erase_if(curves, [&](const LossCurve& c) { return c.model_id != a.model; });
    if (curves.empty()) throw InvalidArgument("fit: no curve for model '" + a.model + "'");
  }
  std::vector<FitReport> reports;
  for (const auto& c : curves) reports.push_back({c.model_id, fit_two_phase(c, cfg.fit)});
  const Format f = format_from_string(g.format);
  const auto dir = open_run(require_out(a.out, cfg, "fit"), "fit", cfg, in);
  write_file(dir / ("fit" + ext(f)), write_report(reports, f));
  if (!g.quiet) {
    for (const auto& r : reports)
      out << r.model_id << ": B=" << r.result.params.B << " E=" << r.result.params.E
          << " beta=" << r.result.params.beta << " residual_std=" << r.result.residual_std << "\n";
    out << dir.string() << "\n";
  }
}

struct SelectArgs {
  std::string curves, synthetic, config, out;
};

void cmd_select(const SelectArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config(a.config, in, g);
  CandidatePool pool;
  if (!a.curves.empty()) {
    for (auto& c : parse_curves(in.read("curves", a.curves), by_extension(a.curves))) {
      pool.d_full = std::max(pool.d_full, c.observations.back().dataset_size);
      const auto it = cfg.cost.param_counts.find(c.model_id);
      const std::uint64_t n = it == cfg.cost.param_counts.end() ? 1 : it->second;
      const std::string id = c.model_id;
      pool.models.push_back({id, n, std::make_shared<RecordedCurveProvider>(std::move(c), cfg.exact_match), {}});
    }
  } else {
    pool = generate_pool(parse_pool_spec(in.read("synthetic", a.synthetic))).pool;
  }
  const auto reports = select_pool(pool, cfg.selection);
  const auto ranking = rank_pool(reports, cfg.polarity);
  const Format f = format_from_string(g.format);
  const auto dir = open_run(require_out(a.out, cfg, "select"), "select", cfg, in);
  write_file(dir / ("selection" + ext(f)), write_report(reports, f));
  write_file(dir / ("ranking" + ext(f)), write_report(ranking, f));
  std::map<std::string, double> pred, truth;
  for (std::size_t i = 0; i < pool.models.size(); ++i) {
    if (!pool.models[i].ground_truth) break;
    truth[pool.models[i].model_id] = *pool.models[i].ground_truth;
    pred[reports[i].model_id] = reports[i].predicted_score;
  }
  if (truth.size() == pool.models.size() && truth.size() >= 2)
    write_file(dir / ("metrics" + ext(f)), write_report(compare(pred, truth, cfg.polarity), f));
  if (!g.quiet) {
    print_table(out, ranking);
    out << dir.string() << "\n";
  }
}

struct RankArgs {
  std::string reports, polarity = "loss", out;
};

void cmd_rank(const RankArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  fs::path path = a.reports;
  if (fs::is_directory(path)) path /= "selection.json";
  RunConfig cfg = load_config("", in, g);
  cfg.polarity = polarity_from_string(a.polarity);
  const auto ranking = rank_pool(parse_selection_reports(in.read("reports", path)), cfg.polarity);
  const Format f = format_from_string(g.format);
  const std::string bytes = write_report(ranking, f);
  if (const auto o = resolve_out(a.out, cfg)) write_file(open_run(*o, "rank", cfg, in) / ("ranking" + ext(f)), bytes);
  if (!g.quiet) out << bytes;
}

struct BoundArgs {
  std::string netspec, data, config, out;
};

void cmd_bound(const BoundArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config(a.config, in, g);
  const ToyNetwork net = parse_network(in.read("netspec", a.netspec));
  const Dataset data = parse_dataset(in.read("data", a.data), by_extension(a.data));
  if (data.empty()) throw InvalidArgument("bound: empty dataset");
  double total = 0.0, worst = 0.0;
  for (const auto& s : data) {
    const double r = forward(net, s.x) - s.y;
    total += 0.5 * r * r;
    worst = std::max(worst, 0.5 * r * r);
  }
  const double emp = total / static_cast<double>(data.size());
  const auto h = hessian_terms(net, data, cfg.bound.slack);
  const auto report = evaluate_pac_bound(emp, h, data.size(), cfg.bound.C.value_or(worst), cfg.bound.epsilon,
                                         cfg.bound.xi_constant);
  const Format f = format_from_string(g.format);
  const std::string bytes = write_report(report, f);
  if (const auto o = resolve_out(a.out, cfg)) write_file(open_run(*o, "bound", cfg, in) / ("bound" + ext(f)), bytes);
  if (!g.quiet) {
    out << bytes;
    if (!cfg.bound.sigmas.empty()) out << "kl_divergence " << kl_divergence(net, cfg.bound.sigmas) << "\n";
  }
}

struct SimulateArgs {
  std::string spec, out;
};

void cmd_simulate(const SimulateArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config("", in, g);
  const PoolGenSpec spec = parse_pool_spec(in.read("spec", a.spec));
  const auto gen = generate_pool(spec);
  auto sizes = halving_chain(spec.d_full, std::min<std::uint64_t>(32, spec.d_full));
  std::reverse(sizes.begin(), sizes.end());
  std::vector<LossCurve> curves;
  std::string truth = "model_id,value\n";
  for (const auto& m : gen.pool.models) {
    std::vector<LossObservation> obs;
    for (auto s : sizes) obs.push_back({s, *m.provider->evaluate({s, {}}), std::nullopt});
    curves.push_back(make_curve(m.model_id, std::move(obs)));
  }
  const Format f = format_from_string(g.format);
  std::map<std::string, double> gt;
  for (const auto& m : gen.pool.models) gt[m.model_id] = *m.ground_truth;
  const auto dir = open_run(require_out(a.out, cfg, "simulate"), "simulate", cfg, in);
  write_file(dir / ("curves" + ext(f)), write_curves(curves, f));
  for (const auto& [id, v] : gt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    truth += id + "," + buf + "\n";
  }
  write_file(dir / "ground_truth.csv", truth);
  std::vector<FitReport> params;
  for (std::size_t i = 0; i < gen.truth.size(); ++i) {
    FitReport r;
    r.model_id = gen.pool.models[i].model_id;
    r.result.params = gen.truth[i];
    r.result.converged = true;
    params.push_back(r);
  }
  write_file(dir / "truth.json", write_report(params, Format::JSON));
  if (!g.quiet) out << curves.size() << " curves x " << sizes.size() << " sizes\n" << dir.string() << "\n";
}

struct CostArgs {
  std::string method, inputs, out;
};

void cmd_cost(const CostArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config("", in, g);
  const CostInputFile file = parse_cost_inputs(in.read("inputs", a.inputs));
  std::map<std::string, std::vector<std::uint64_t>> chains;
  if (!file.selection_reports.empty()) {
    const fs::path p = fs::path(a.inputs).parent_path() / file.selection_reports;
    for (const auto& r : parse_selection_reports(in.read("selection_reports", p)))
      chains[r.model_id] = executed_sizes(r);
  }
  MethodCostSpec spec;
  spec.method = cost_method_from_string(a.method);
  spec.sub_fraction = file.sub_fraction;
  for (const auto& m : file.models) {
    PoolMember pm{m.model_id, {file.epochs, file.hp_rounds, m.param_count, file.d_full}, m.executed_sizes};
    if (spec.method == CostMethod::LensLLM && pm.executed_sizes.empty()) {
      const auto it = chains.find(m.model_id);
      if (it == chains.end()) throw InvalidArgument("cost: no executed sizes for '" + m.model_id + "'");
      pm.executed_sizes = it->second;
    }
    spec.pool.push_back(std::move(pm));
  }
  const CostReport report{spec.method, method_cost(spec)};
  std::vector<CostPoint> points;
  for (std::size_t i = 0; i < file.models.size(); ++i)
    if (file.models[i].performance) points.push_back({report.breakdown.per_model[i].second, *file.models[i].performance});
  const std::string pareto = points.empty() ? write_pareto_csv({}) : write_pareto_csv(pareto_front(points));
  const Format f = format_from_string(g.format);
  const std::string bytes = write_report(report, f);
  if (const auto o = resolve_out(a.out, cfg)) {
    const auto dir = open_run(*o, "cost", cfg, in);
    write_file(dir / ("cost" + ext(f)), bytes);
    write_file(dir / "pareto.csv", pareto);
  }
  if (!g.quiet) out << bytes;
}

struct MetricsArgs {
  std::string pred, actual, polarity = "loss", out;
};

void cmd_metrics(const MetricsArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  RunConfig cfg = load_config("", in, g);
  cfg.polarity = polarity_from_string(a.polarity);
  const auto pred = parse_score_table(in.read("pred", a.pred), by_extension(a.pred));
  const auto actual = parse_score_table(in.read("actual", a.actual), by_extension(a.actual));
  const Format f = format_from_string(g.format);
  const std::string bytes = write_report(compare(pred, actual, cfg.polarity), f);
  if (const auto o = resolve_out(a.out, cfg)) write_file(open_run(*o, "metrics", cfg, in) / ("metrics" + ext(f)), bytes);
  if (!g.quiet) out << bytes;
}

struct SweepArgs {
  std::string pool, config, out;
  std::vector<std::size_t> gammas{3, 4, 5};
  std::vector<double> taus{1, 2, 3, 4, 5};
};

void cmd_sweep(const SweepArgs& a, const Globals& g, std::ostream& out) {
  Inputs in;
  const RunConfig cfg = load_config(a.config, in, g);
  const auto gen = generate_pool(parse_pool_spec(in.read("pool", a.pool)));
  SweepSpec spec;
  spec.gammas = a.gammas;
  spec.taus = a.taus;
  spec.base = cfg.selection;
  const auto table = ablation_sweep(gen.pool, spec);
  const Format f = format_from_string(g.format);
  const auto dir = open_run(require_out(a.out, cfg, "sweep"), "sweep", cfg, in);
  write_file(dir / ("sweep" + ext(f)), write_report(table, f));
  if (!g.quiet) {
    out << write_report(table, Format::CSV);
    if (const auto s = pearson_spread(table)) out << "pearson_spread " << *s << "\n";
    out << dir.string() << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fine-tuning loss-curve fitting, progressive model selection and bound evaluation", "lens"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed overriding the config file")->capture_default_str();
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress standard output");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit the rectified scaling law to each curve");
  c_fit->add_option("--curves", fit.curves, "Curve file (.csv or .json)")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--config", fit.config, "Run configuration")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--model", fit.model, "Fit only this model");
  c_fit->add_option("--out", fit.out, "Output root");

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select", "Progressive selection over a pool");
  auto* o_curves = c_sel->add_option("--curves", sel.curves, "Recorded curves")->check(CLI::ExistingFile);
  auto* o_syn = c_sel->add_option("--synthetic", sel.synthetic, "Synthetic pool spec")->check(CLI::ExistingFile);
  o_curves->excludes(o_syn);
  c_sel->add_option("--config", sel.config, "Run configuration")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--out", sel.out, "Output root");

  RankArgs rank;
  auto* c_rank = app.add_subcommand("rank", "Rank models from selection reports");
  c_rank->add_option("--reports", rank.reports, "Run directory or selection.json")->required()->check(CLI::ExistingPath);
  c_rank->add_option("--polarity", rank.polarity)->check(CLI::IsMember({"loss", "score"}))->capture_default_str();
  c_rank->add_option("--out", rank.out, "Output root");

  BoundArgs bound;
  auto* c_bound = app.add_subcommand("bound", "Evaluate the PAC-Bayesian bound on a toy network");
  c_bound->add_option("--netspec", bound.netspec, "Network file")->required()->check(CLI::ExistingFile);
  c_bound->add_option("--data", bound.data, "Dataset file")->required()->check(CLI::ExistingFile);
  c_bound->add_option("--config", bound.config, "Run configuration")->required()->check(CLI::ExistingFile);
  c_bound->add_option("--out", bound.out, "Output root");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate synthetic curves and ground truth");
  c_sim->add_option("--spec", sim.spec, "Pool spec")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--out", sim.out, "Output root");

  CostArgs cost;
  auto* c_cost = app.add_subcommand("cost", "Training FLOPs per selection method");
  c_cost->add_option("--method", cost.method)->required()->check(CLI::IsMember({"full", "sub", "lens"}));
  c_cost->add_option("--inputs", cost.inputs, "Cost inputs")->required()->check(CLI::ExistingFile);
  c_cost->add_option("--out", cost.out, "Output root");

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "PearCorr, RelAcc and RMSE of predictions");
  c_met->add_option("--pred", met.pred, "Predicted scores")->required()->check(CLI::ExistingFile);
  c_met->add_option("--actual", met.actual, "Actual scores")->required()->check(CLI::ExistingFile);
  c_met->add_option("--polarity", met.polarity)->check(CLI::IsMember({"loss", "score"}))->capture_default_str();
  c_met->add_option("--out", met.out, "Output root");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Gamma/tau ablation on a synthetic pool");
  c_sw->add_option("--pool", sw.pool, "Pool spec")->required()->check(CLI::ExistingFile);
  c_sw->add_option("--gamma", sw.gammas, "Comma-separated gamma values")->delimiter(',')->capture_default_str();
  c_sw->add_option("--tau", sw.taus, "Comma-separated tau values")->delimiter(',')->capture_default_str();
  c_sw->add_option("--config", sw.config, "Run configuration")->check(CLI::ExistingFile);
  c_sw->add_option("--out", sw.out, "Output root");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (c_sel->parsed() && sel.curves.empty() && sel.synthetic.empty())
      throw CLI::RequiredError("select: one of --curves or --synthetic");
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (c_fit->parsed()) cmd_fit(fit, g, out);
    else if (c_sel->parsed()) cmd_select(sel, g, out);
    else if (c_rank->parsed()) cmd_rank(rank, g, out);
    else if (c_bound->parsed()) cmd_bound(bound, g, out);
    else if (c_sim->parsed()) cmd_simulate(sim, g, out);
    else if (c_cost->parsed()) cmd_cost(cost, g, out);
    else if (c_met->parsed()) cmd_metrics(met, g, out);
    else if (c_sw->parsed()) cmd_sweep(sw, g, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace lens
