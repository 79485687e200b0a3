#include "lens/cli.hpp"
#include "lens/io.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

using namespace lens;
namespace fs = std::filesystem;

namespace {

RectifiedParams surrogate(double B, double E, double beta, double f0, double kappa = 0.0, double t = 0.0) {
  RectifiedParams p;
  p.B = B;
  p.E = E;
  p.beta = beta;
  p.t = t;
  p.f_mode = SurrogateF{f0, kappa};
  return p;
}

std::size_t line_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.line();
  }
  FAIL("expected ParseError");
  return 0;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("lens_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

int cli(std::vector<std::string> args, std::string* stdout_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  return code;
}

}  // namespace

TEST_CASE("curve files: header and two rows") {
  const std::string csv = "model_id,dataset_size,test_loss,steps,seed\nm,10,0.5,,\nm,20,0.4,100,\n";
  const auto curves = parse_curves(csv, Format::CSV);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].model_id == "m");
  REQUIRE(curves[0].observations.size() == 2);
  CHECK(curves[0].observations[0].dataset_size == 10);
  CHECK(curves[0].observations[1].test_loss == 0.4);
  CHECK(curves[0].observations[1].steps == 100u);
  CHECK_FALSE(curves[0].observations[0].steps.has_value());
}

TEST_CASE("curve files: grouping, ordering and seed merge") {
  const std::string csv =
      "model_id,dataset_size,test_loss,steps,seed\n"
      "b,40,0.3,,\n"
      "a,20,0.5,,1\n"
      "\"x,y\",5,0.9,,\n"
      "a,20,0.2,,2\n"
      "a,10,0.7,,\n";
  const auto curves = parse_curves(csv, Format::CSV);
  REQUIRE(curves.size() == 3);
  CHECK(curves[0].model_id == "a");
  CHECK(curves[1].model_id == "b");
  CHECK(curves[2].model_id == "x,y");
  REQUIRE(curves[0].observations.size() == 2);
  CHECK(curves[0].observations[0].dataset_size == 10);
  CHECK(curves[0].observations[1].test_loss == doctest::Approx(std::sqrt(0.5 * 0.2)).epsilon(1e-15));
}

TEST_CASE("curve files: diagnostics name the line") {
  const std::string head = "model_id,dataset_size,test_loss,steps,seed\n";
  CHECK(line_of([&] { parse_curves(head + "m,10,0.5,,\nm,20,0.4,,\nm,10,0.3,,\n", Format::CSV); }) == 4);
  try {
    parse_curves(head + "m,10,0.5,,\nm,10,0.3,,\n", Format::CSV);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
  CHECK(line_of([&] { parse_curves(head + "m,10,-0.1,,\n", Format::CSV); }) == 2);
  CHECK(line_of([&] { parse_curves(head + "m,0,0.1,,\n", Format::CSV); }) == 2);
  CHECK(line_of([&] { parse_curves(head + "m,10,0.1,,\nm,x,0.1,,\n", Format::CSV); }) == 3);
  CHECK(line_of([&] { parse_curves(head + "m,10,0.1\n", Format::CSV); }) == 2);
  CHECK(line_of([&] { parse_curves(head + "m,10,nan,,\n", Format::CSV); }) == 2);
  CHECK(line_of([&] { parse_curves(head + "m,10,0.1,0,\n", Format::CSV); }) == 2);
  CHECK(line_of([&] { parse_curves("model,size,loss\n", Format::CSV); }) == 1);
  CHECK_THROWS_AS(parse_curves("", Format::CSV), ParseError);
  // Same size under distinct seeds is allowed.
  CHECK_NOTHROW(parse_curves(head + "m,10,0.5,,1\nm,10,0.4,,2\n", Format::CSV));
}

TEST_CASE("curve files: JSON forms") {
  const std::string bare = R"([{"model_id":"m","dataset_size":8,"test_loss":0.5},
                               {"model_id":"m","dataset_size":4,"test_loss":0.6,"steps":3,"seed":-1}])";
  const auto c = parse_curves(bare, Format::JSON);
  REQUIRE(c.size() == 1);
  CHECK(c[0].observations.front().dataset_size == 4);
  CHECK(line_of([] { parse_curves(R"([{"model_id":"m","dataset_size":8,"test_loss":0.5},
                                      {"model_id":"m","dataset_size":8,"test_loss":0.4}])",
                                  Format::JSON); }) == 2);
  CHECK(line_of([] { parse_curves(R"([{"model_id":"m","dataset_size":8,"test_loss":-1}])", Format::JSON); }) == 1);
  CHECK(line_of([] { parse_curves(R"([{"model_id":"m","dataset_size":8,"test_loss":1,"extra":1}])", Format::JSON); }) ==
        1);
  CHECK_THROWS_AS(parse_curves("[{", Format::JSON), ParseError);
  CHECK_THROWS_AS(parse_curves(R"({"records":[]})", Format::JSON), ParseError);  // no schema tag

  const auto written = write_curves(c, Format::JSON);
  CHECK(write_curves(parse_curves(written, Format::JSON), Format::JSON) == written);
  const auto csv = write_curves(c, Format::CSV);
  CHECK(write_curves(parse_curves(csv, Format::CSV), Format::CSV) == csv);
}

TEST_CASE("reals survive the round trip exactly") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-30, 30);
  std::vector<LossObservation> obs;
  for (std::uint64_t i = 1; i <= 200; ++i) obs.push_back({i, std::exp(u(rng)), std::nullopt});
  const auto curve = make_curve("r", obs);
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto back = parse_curves(write_curves({curve}, f), f);
    for (std::size_t i = 0; i < obs.size(); ++i) CHECK(back[0].observations[i].test_loss == obs[i].test_loss);
  }
}

TEST_CASE("fit reports round-trip in both F modes") {
  CurveGenSpec gen;
  gen.true_params = surrogate(10, 0.3, 0.5, 50);
  gen.sizes = doubling_sizes(32, 4096);
  std::vector<FitReport> reports{{"s", fit_two_phase(generate_curve(gen))}};

  std::mt19937_64 rng(1);
  KernelF k;
  k.kernel = std::make_shared<const KernelMatrix>(KernelMatrix::from_entries(test::random_psd(rng, 3, 3)));
  k.residual = test::to_eigen({0.1, -0.2, 0.3});
  k.eta = 0.01;
  FitReport kr;
  kr.model_id = "k";
  kr.result.params = surrogate(2, 0.1, 0.7, 1);
  kr.result.params.f_mode = k;
  kr.result.params.t = 12.5;
  kr.result.objective_value = std::numeric_limits<double>::infinity();
  kr.result.residual_std = std::numeric_limits<double>::quiet_NaN();
  reports.push_back(kr);

  const auto bytes = write_report(reports, Format::JSON);
  CHECK(bytes.find("\"schema_version\": 1") != std::string::npos);
  CHECK(bytes.find("\"inf\"") != std::string::npos);
  const auto back = parse_fit_reports(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].result.params.B == reports[0].result.params.B);
  CHECK(std::isnan(back[1].result.residual_std));
  CHECK(evaluate_f(back[1].result.params.f_mode, 12.5) == evaluate_f(kr.result.params.f_mode, 12.5));
  CHECK(write_report(back, Format::JSON) == bytes);
  CHECK(write_report(reports, Format::CSV).rfind("model_id,B,E,beta", 0) == 0);
}

TEST_CASE("selection reports, ranking and metrics round-trip") {
  PoolGenSpec spec;
  spec.n_models = 4;
  spec.d_full = 2048;
  spec.seed = 6;
  const auto g = generate_pool(spec);
  SelectionConfig cfg;
  cfg.estimator = EstimatorKind::ScalingLaw;
  cfg.gamma = 4;
  auto reports = select_pool(g.pool, cfg);
  cfg.estimator = EstimatorKind::LogLinear;
  reports.push_back(select_pool(g.pool, cfg).front());
  reports.back().model_id = "loglinear";

  const auto bytes = write_report(reports, Format::JSON);
  for (const char* key : {"\"r\"", "\"s\"", "\"a\"", "\"break_reason\"", "\"trace\""})
    CHECK(bytes.find(key) != std::string::npos);
  const auto back = parse_selection_reports(bytes);
  CHECK(write_report(back, Format::JSON) == bytes);
  CHECK(back[0].predicted_score == reports[0].predicted_score);
  CHECK(back[0].trace.size() == reports[0].trace.size());

  const auto ranking = rank_pool(reports, Polarity::LossLike);
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto rb = write_report(ranking, f);
    CHECK(write_report(parse_ranking(rb, f), f) == rb);
  }

  MetricsReport m{5, std::nullopt, 0.75, 0.125};
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto mb = write_report(m, f);
    CHECK(write_report(parse_metrics_report(mb, f), f) == mb);
  }
  CHECK(write_report(m, Format::CSV).rfind("n,pearson,relative_accuracy,rmse\n", 0) == 0);
}

TEST_CASE("bound, cost and sweep reports round-trip") {
  const auto b = evaluate_pac_bound(0.1, {0.3, 0.0, 1e-300}, 1000, 2.0, 0.01, 1.0);
  const auto bb = write_report(b, Format::JSON);
  CHECK(write_report(parse_bound_report(bb), Format::JSON) == bb);
  CHECK(parse_bound_report(bb).bound_value == b.bound_value);

  MethodCostSpec cs;
  cs.method = CostMethod::LensLLM;
  cs.pool.push_back({"a,b", {1, 2, 1000, 64}, {64, 32, 16}});
  cs.pool.push_back({"c", {1, 2, 3000, 64}, {64}});
  const CostReport cr{cs.method, method_cost(cs)};
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto cb = write_report(cr, f);
    const auto back = parse_cost_report(cb, f);
    CHECK(back.breakdown.per_model[0].first == "a,b");
    CHECK(write_report(back, f) == cb);
  }

  SweepTable t;
  t.gammas = {3, 4};
  t.taus = {1.0, 2.5};
  for (auto gm : t.gammas)
    for (auto tau : t.taus) t.cells.push_back({gm, tau, std::nullopt, std::nullopt, 0.9 + tau / 100, 0.99, ""});
  t.cells[3].pearson.reset();
  t.cells[3].error = "undefined correlation";
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto sb = write_report(t, f);
    CHECK(write_report(parse_sweep_table(sb, f), f) == sb);
  }

  SweepTable toy;
  toy.gammas = {3};
  toy.taus = {3.0};
  toy.lrs = {0.05, 0.1};
  toy.batch_sizes = {0, 16};
  for (double lr : toy.lrs)
    for (auto bs : toy.batch_sizes) toy.cells.push_back({3, 3.0, lr, bs, lr + static_cast<double>(bs), std::nullopt, ""});
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto sb = write_report(toy, f);
    CHECK(write_report(parse_sweep_table(sb, f), f) == sb);
  }
  CHECK(write_pareto_csv({{1, 2}}) == "cost,performance\n1,2\n");
}

TEST_CASE("dataset, network and score tables") {
  std::mt19937_64 rng(3);
  const auto data = test::random_dataset(rng, 5, 3);
  for (Format f : {Format::JSON, Format::CSV}) {
    const auto bytes = write_dataset(data, f);
    const auto back = parse_dataset(bytes, f);
    REQUIRE(back.size() == 5);
    CHECK(back[2].x == data[2].x);
    CHECK(write_dataset(back, f) == bytes);
  }
  CHECK(line_of([] { parse_dataset("x0,y\n1,2\n1\n", Format::CSV); }) == 3);

  const auto net = parse_network(R"({"architecture":"mlp","layer_dims":[2,3,1],"seed":4})");
  CHECK(net.displacement(0).norm() == 0.0);
  auto moved = net;
  moved.weights()[0] += 0.5;
  const auto back = parse_network(write_network(moved));
  CHECK(back.displacement(0)[0] == 0.5);
  CHECK(write_network(back) == write_network(moved));
  CHECK_THROWS_AS(parse_network(R"({"layer_dims":[2,1],"weights":[1]})"), InvalidArgument);
  CHECK_THROWS_AS(parse_network(R"({"layer_dims":[2,1],"colour":1})"), ParseError);

  const auto s = parse_score_table("model_id,value\na,1\nb,2.5\n", Format::CSV);
  CHECK(s.at("b") == 2.5);
  CHECK(parse_score_table(R"({"a": 1, "b": 2})", Format::JSON).size() == 2);
  CHECK(line_of([] { parse_score_table("model_id,value\na,1\na,2\n", Format::CSV); }) == 3);
}

TEST_CASE("run configuration") {
  const auto defaults = parse_run_config("{}");
  CHECK(defaults.selection.gamma == 3);
  CHECK(defaults.polarity == Polarity::LossLike);
  CHECK_FALSE(defaults.exact_match);

  const auto c = parse_run_config(R"({"seed": 9, "fit": {"restarts": 4, "penalty": "huber"},
      "selection": {"gamma": 4, "tau": 2.5, "polarity": "score", "estimator": "log_linear"},
      "bound": {"epsilon": 0.05, "sigmas": [0.1, 0.2]},
      "cost": {"epochs": 3, "param_counts": {"m0": 1000}}})");
  CHECK(c.seed == 9);
  CHECK(c.fit.restarts == 4);
  CHECK(c.fit.penalty == Penalty::Huber);
  CHECK(c.selection.gamma == 4);
  CHECK(c.selection.fit.restarts == 4);
  CHECK(c.selection.seed == 9);
  CHECK(c.polarity == Polarity::ScoreLike);
  CHECK(c.bound.sigmas.size() == 2);
  CHECK(c.cost.param_counts.at("m0") == 1000);

  CHECK(write_run_config(parse_run_config(write_run_config(c))) == write_run_config(c));

  for (const char* bad : {R"({"sed": 1})", R"({"fit": {"restart": 1}})", R"({"selection": {"gama": 3}})",
                          R"({"bound": {"eps": 1}})", R"({"cost": {"epoch": 1}})"}) {
    try {
      parse_run_config(bad);
      FAIL("accepted " << bad);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
    }
  }
  try {
    parse_run_config(R"({"fit": {"restart": 1}})");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'fit.restart'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config(R"({"seed": "x"})"), ParseError);
  CHECK_THROWS_AS(parse_run_config(R"({"selection": {"gamma": 1}})"), InvalidArgument);
  CHECK_THROWS_AS(parse_run_config(R"({"selection": {"estimator": "cubic"}})"), InvalidArgument);

  PoolGenSpec p;
  p.n_models = 7;
  p.B = {2, 3};
  const auto pb = write_pool_spec(p);
  CHECK(write_pool_spec(parse_pool_spec(pb)) == pb);
  CHECK_THROWS_AS(parse_pool_spec(R"({"B": [1]})"), ParseError);
}

TEST_CASE("hashing, run ids and manifests") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::vector<RunInput> in{{"curves", sha256_hex("x")}};
  const auto id = make_run_id("fit", "h", 1, in);
  CHECK(id == make_run_id("fit", "h", 1, in));
  CHECK(id != make_run_id("fit", "h", 2, in));
  CHECK(id != make_run_id("select", "h", 1, in));
  CHECK(id.rfind("fit-", 0) == 0);

  TempDir tmp("manifest");
  RunManifest m;
  m.run_id = id;
  m.command = "fit";
  m.inputs = in;
  m.versions = component_versions();
  const auto dir = create_run_dir(tmp.path, m);
  CHECK(dir == tmp.path / id);
  const auto text = read_file(dir / "manifest.json");
  CHECK(text.find("\"created_at\"") != std::string::npos);
  CHECK(text.find(in[0].sha256) != std::string::npos);
  CHECK_THROWS_AS(read_file(tmp.path / "missing"), IoError);
}

TEST_CASE("command line end to end") {
  TempDir tmp("cli");
  const auto spec = (tmp.path / "pool.json").string();
  write_file(spec, R"({"n_models": 5, "d_full": 2048, "log_noise_sigma": 0.01, "seed": 3})");
  const auto cfg = (tmp.path / "cfg.json").string();
  write_file(cfg, R"({"seed": 2})");
  const auto out_a = (tmp.path / "a").string(), out_b = (tmp.path / "b").string();

  CHECK(cli({"simulate", "--spec", spec, "--out", out_a, "--quiet"}) == 0);
  fs::path curves;
  for (const auto& e : fs::directory_iterator(out_a)) curves = e.path() / "curves.json";
  REQUIRE(fs::exists(curves));
  CHECK(parse_curves(read_file(curves), Format::JSON).size() == 5);

  for (const auto& out : {out_a, out_b}) {
    CHECK(cli({"select", "--curves", curves.string(), "--config", cfg, "--out", out, "--quiet"}) == 0);
    CHECK(cli({"select", "--synthetic", spec, "--config", cfg, "--out", out, "--quiet"}) == 0);
    CHECK(cli({"fit", "--curves", curves.string(), "--config", cfg, "--model", "m1", "--out", out, "--quiet",
               "--format", "csv"}) == 0);
    CHECK(cli({"sweep", "--pool", spec, "--gamma", "3,4", "--tau", "2", "--out", out, "--quiet"}) == 0);
  }
  auto a = read_tree(out_a), b = read_tree(out_b);
  std::erase_if(a, [](const auto& kv) { return kv.first.rfind("simulate", 0) == 0; });
  CHECK(a.size() == b.size());
  CHECK(a == b);

  fs::path sel;
  for (const auto& e : fs::directory_iterator(out_b))
    if (fs::exists(e.path() / "metrics.json")) sel = e.path();
  REQUIRE(!sel.empty());
  const auto metrics = parse_metrics_report(read_file(sel / "metrics.json"), Format::JSON);
  CHECK(metrics.n == 5);
  CHECK(*metrics.pearson > 0.9);

  std::string text;
  CHECK(cli({"rank", "--reports", sel.string(), "--format", "csv"}, &text) == 0);
  CHECK(text.rfind("rank,model_id,score\n1,", 0) == 0);

  std::string truth;
  for (const auto& e : fs::directory_iterator(out_a))
    if (fs::exists(e.path() / "ground_truth.csv")) truth = (e.path() / "ground_truth.csv").string();
  CHECK(cli({"metrics", "--pred", (sel / "selection.json").string(), "--actual", truth}, &text) == 0);
  CHECK(parse_metrics_report(text, Format::JSON).pearson == metrics.pearson);

  const auto costin = (tmp.path / "cost.json").string();
  write_file(costin, R"({"d_full": 2048, "selection_reports": "b/)" + sel.filename().string() +
                         R"(/selection.json", "models": [{"model_id": "m0", "param_count": 100}]})");
  CHECK(cli({"cost", "--method", "lens", "--inputs", costin, "--format", "csv"}, &text) == 0);
  CHECK(text.find("lens,TOTAL,") != std::string::npos);

  const auto net = (tmp.path / "net.json").string(), data = (tmp.path / "data.csv").string();
  write_file(net, R"({"architecture": "mlp", "layer_dims": [2, 3, 1], "seed": 1})");
  write_file(data, "x0,x1,y\n0.1,0.2,0.3\n0.5,-0.5,0\n");
  CHECK(cli({"bound", "--netspec", net, "--data", data, "--config", cfg}, &text) == 0);
  CHECK(parse_bound_report(text).n == 2);

  CHECK(cli({"select", "--config", cfg, "--out", out_a}) == 2);
  CHECK(cli({"select", "--curves", curves.string(), "--synthetic", spec, "--config", cfg, "--out", out_a}) == 2);
  CHECK(cli({"fit", "--curves", "/nonexistent.csv", "--config", cfg}) == 2);
  CHECK(cli({"frobnicate"}) == 2);
  write_file(cfg, R"({"seeed": 2})");
  CHECK(cli({"fit", "--curves", curves.string(), "--config", cfg, "--out", out_a}) == 1);
}
