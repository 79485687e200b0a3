#include "lens/io.hpp"

#include <Eigen/Core>
#include <boost/tokenizer.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

namespace lens {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* to_string(Format f) { return f == Format::JSON ? "json" : "csv"; }

Format format_from_string(const std::string& name) {
  if (name == "json") return Format::JSON;
  if (name == "csv") return Format::CSV;
  throw InvalidArgument("unknown format '" + name + "' (expected json or csv)");
}

namespace {

// ---------------------------------------------------------------------------
// Scalars

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ordered_json jreal(double v) {
  if (std::isfinite(v)) return v;
  return fmt_real(v);
}

double parse_real(std::string_view s, const std::string& what, std::size_t line) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("line " + std::to_string(line) + ": " + what + " '" + std::string(s) + "' is not a number",
                     line);
  return v;
}

template <class Int>
Int parse_int(std::string_view s, const std::string& what, std::size_t line) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("line " + std::to_string(line) + ": " + what + " '" + std::string(s) + "' is not an integer",
                     line);
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\\\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

std::vector<CsvRow> read_csv(std::string_view bytes) {
  std::vector<CsvRow> rows;
  std::size_t line = 0, pos = 0;
  while (pos < bytes.size()) {
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string text(bytes.substr(pos, end - pos));
    pos = end + 1;
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    CsvRow row{line, {}};
    try {
      boost::tokenizer<boost::escaped_list_separator<char>> tok(text);
      for (const auto& f : tok) row.fields.push_back(f);
    } catch (const boost::escaped_list_error& e) {
      throw ParseError("line " + std::to_string(line) + ": malformed CSV (" + e.what() + ")", line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void expect_header(const std::vector<CsvRow>& rows, std::string_view header) {
  if (rows.empty()) throw ParseError("empty CSV input (expected header '" + std::string(header) + "')", 0);
  std::string got;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) got += (i ? "," : "") + rows[0].fields[i];
  if (got != header)
    throw ParseError("line " + std::to_string(rows[0].line) + ": expected header '" + std::string(header) +
                         "', got '" + got + "'",
                     rows[0].line);
}

void expect_width(const CsvRow& row, std::size_t n) {
  if (row.fields.size() != n)
    throw ParseError("line " + std::to_string(row.line) + ": expected " + std::to_string(n) + " fields, got " +
                         std::to_string(row.fields.size()),
                     row.line);
}

json parse_json(std::string_view bytes) {
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), 0);
  }
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Strict object reader: every key must be consumed.

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(where() + " must be an object", 0);
  }
  ~Reader() = default;

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ParseError(where(key) + " is missing", 0);
    return j_.at(key);
  }

  double real(const std::string& key) {
    const json& v = at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return parse_real(v.get<std::string>(), where(key), 0);
    throw ParseError(where(key) + " must be a number", 0);
  }
  template <class T>
  void real(const std::string& key, T& out) {
    seen_.insert(key);
    if (has(key)) out = real(key);
  }

  std::uint64_t uint(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ParseError(where(key) + " must be a nonnegative integer", 0);
    return v.get<std::uint64_t>();
  }
  template <class T>
  void uint(const std::string& key, T& out) {
    seen_.insert(key);
    if (has(key)) out = static_cast<T>(uint(key));
  }

  std::int64_t integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) throw ParseError(where(key) + " must be an integer", 0);
    return v.get<std::int64_t>();
  }

  std::string str(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) throw ParseError(where(key) + " must be a string", 0);
    return v.get<std::string>();
  }
  void str(const std::string& key, std::string& out) {
    seen_.insert(key);
    if (has(key)) out = str(key);
  }

  bool boolean(const std::string& key) {
    const json& v = at(key);
    if (!v.is_boolean()) throw ParseError(where(key) + " must be a boolean", 0);
    return v.get<bool>();
  }
  void boolean(const std::string& key, bool& out) {
    seen_.insert(key);
    if (has(key)) out = boolean(key);
  }

  const json& array(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) throw ParseError(where(key) + " must be an array", 0);
    return v;
  }

  std::vector<double> reals(const std::string& key) {
    std::vector<double> out;
    for (const auto& v : array(key)) {
      if (v.is_number()) out.push_back(v.get<double>());
      else if (v.is_string()) out.push_back(parse_real(v.get<std::string>(), where(key), 0));
      else throw ParseError(where(key) + " must hold numbers", 0);
    }
    return out;
  }

  std::vector<std::uint64_t> uints(const std::string& key) {
    std::vector<std::uint64_t> out;
    for (const auto& v : array(key)) {
      if (!v.is_number_unsigned()) throw ParseError(where(key) + " must hold nonnegative integers", 0);
      out.push_back(v.get<std::uint64_t>());
    }
    return out;
  }

  /// Marks an optional key as known without reading it.
  void skip(const std::string& key) { seen_.insert(key); }

  Reader object(const std::string& key) { return Reader(at(key), join(key)); }

  std::string join(const std::string& key) const {
    return path_ + (key.empty() || path_.empty() ? "" : ".") + key;
  }
  std::string where(const std::string& key = "") const { return "'" + join(key) + "'"; }

  /// Throws on keys nobody asked for.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ParseError("unknown key " + where(k), 0);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check_schema(Reader& r, const std::string& kind) {
  const auto v = r.integer("schema_version");
  if (v != kSchemaVersion)
    throw ParseError("unsupported schema_version " + std::to_string(v) + " (expected " +
                         std::to_string(kSchemaVersion) + ")",
                     0);
  const std::string k = r.str("kind");
  if (k != kind) throw ParseError("expected a '" + kind + "' document, got '" + k + "'", 0);
}

ordered_json header(const std::string& kind) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

// ---------------------------------------------------------------------------
// Rectified parameters

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(jreal(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

ordered_json params_json(const RectifiedParams& p) {
  ordered_json j;
  j["B"] = jreal(p.B);
  j["E"] = jreal(p.E);
  j["beta"] = jreal(p.beta);
  j["t"] = jreal(p.t);
  ordered_json f;
  if (const auto* s = std::get_if<SurrogateF>(&p.f_mode)) {
    f["type"] = "surrogate";
    f["f0"] = jreal(s->f0);
    f["kappa"] = jreal(s->kappa);
  } else {
    const auto& k = std::get<KernelF>(p.f_mode);
    f["type"] = "kernel";
    f["eta"] = jreal(k.eta);
    ordered_json r = ordered_json::array();
    for (Eigen::Index i = 0; i < k.residual.size(); ++i) r.push_back(jreal(k.residual[i]));
    f["residual"] = r;
    f["kernel"] = k.kernel ? matrix_json(k.kernel->entries()) : ordered_json::array();
  }
  j["f_mode"] = f;
  return j;
}

RectifiedParams params_from(Reader r) {
  RectifiedParams p;
  p.B = r.real("B");
  p.E = r.real("E");
  p.beta = r.real("beta");
  p.t = r.real("t");
  Reader f = r.object("f_mode");
  const std::string type = f.str("type");
  if (type == "surrogate") {
    p.f_mode = SurrogateF{f.real("f0"), f.real("kappa")};
  } else if (type == "kernel") {
    KernelF k;
    k.eta = f.real("eta");
    const auto res = f.reals("residual");
    k.residual = Eigen::Map<const Eigen::VectorXd>(res.data(), static_cast<Eigen::Index>(res.size()));
    const json& rows = f.array("kernel");
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const json& row = rows[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
        throw ParseError("kernel matrix must be square", 0);
      for (Eigen::Index c = 0; c < n; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    k.kernel = std::make_shared<const KernelMatrix>(KernelMatrix::from_entries(m));
    p.f_mode = std::move(k);
  } else {
    throw ParseError("unknown f_mode type '" + type + "'", 0);
  }
  f.finish();
  r.finish();
  return p;
}

ordered_json estimator_json(const Estimator& e) {
  ordered_json j;
  j["kind"] = to_string(e.kind);
  j["slope"] = jreal(e.slope);
  j["intercept"] = jreal(e.intercept);
  j["fit_residual_std"] = jreal(e.fit_residual_std);
  if (e.kind == EstimatorKind::ScalingLaw) j["params"] = params_json(e.params);
  return j;
}

Estimator estimator_from(Reader r) {
  Estimator e;
  e.kind = estimator_kind_from_string(r.str("kind"));
  e.slope = r.real("slope");
  e.intercept = r.real("intercept");
  e.fit_residual_std = r.real("fit_residual_std");
  if (e.kind == EstimatorKind::ScalingLaw) e.params = params_from(r.object("params"));
  r.finish();
  return e;
}

template <class F>
auto wrap(const char* what, F&& f) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what(), 0);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string(what) + ": " + e.what(), 0);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Curves

namespace {

void validate_record(const CurveFileRecord& r) {
  const std::string at = "line " + std::to_string(r.line) + ": ";
  if (r.model_id.empty()) throw ParseError(at + "empty model_id", r.line);
  if (r.dataset_size == 0) throw ParseError(at + "dataset_size must be positive", r.line);
  if (!(r.test_loss > 0.0) || !std::isfinite(r.test_loss))
    throw ParseError(at + "test_loss must be a positive finite number, got " + fmt_real(r.test_loss), r.line);
  if (r.steps && *r.steps == 0) throw ParseError(at + "steps must be positive", r.line);
}

}  // namespace

std::vector<CurveFileRecord> parse_curve_records(std::string_view bytes, Format format) {
  std::vector<CurveFileRecord> out;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    expect_header(rows, kCurveCsvHeader);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& row = rows[i];
      expect_width(row, 5);
      CurveFileRecord r;
      r.line = row.line;
      r.model_id = row.fields[0];
      r.dataset_size = parse_int<std::uint64_t>(row.fields[1], "dataset_size", row.line);
      r.test_loss = parse_real(row.fields[2], "test_loss", row.line);
      if (!row.fields[3].empty()) r.steps = parse_int<std::uint64_t>(row.fields[3], "steps", row.line);
      if (!row.fields[4].empty()) r.seed = parse_int<std::int64_t>(row.fields[4], "seed", row.line);
      out.push_back(std::move(r));
    }
  } else {
    const json doc = parse_json(bytes);
    const json* records = &doc;
    std::optional<Reader> top;
    if (doc.is_object()) {
      top.emplace(doc, "");
      check_schema(*top, "curves");
      records = &top->array("records");
      top->finish();
    }
    if (!records->is_array()) throw ParseError("curve JSON must be an array of records", 0);
    std::size_t idx = 0;
    for (const auto& item : *records) {
      ++idx;
      try {
        Reader rd(item, "records[" + std::to_string(idx - 1) + "]");
        CurveFileRecord r;
        r.line = idx;
        r.model_id = rd.str("model_id");
        r.dataset_size = rd.uint("dataset_size");
        r.test_loss = rd.real("test_loss");
        if (rd.has("steps")) r.steps = rd.uint("steps");
        else rd.skip("steps");
        if (rd.has("seed")) r.seed = rd.integer("seed");
        else rd.skip("seed");
        rd.finish();
        out.push_back(std::move(r));
      } catch (const ParseError& e) {
        throw ParseError("record " + std::to_string(idx) + ": " + e.what(), idx);
      }
    }
  }
  std::map<std::tuple<std::string, std::uint64_t, std::optional<std::int64_t>>, std::size_t> seen;
  for (const auto& r : out) {
    validate_record(r);
    const auto key = std::make_tuple(r.model_id, r.dataset_size, r.seed);
    const auto [it, fresh] = seen.emplace(key, r.line);
    if (!fresh)
      throw ParseError((format == Format::CSV ? "line " : "record ") + std::to_string(r.line) +
                           ": duplicate (model_id, dataset_size, seed) = (" + r.model_id + ", " +
                           std::to_string(r.dataset_size) + ", " + (r.seed ? std::to_string(*r.seed) : "none") +
                           "), first seen at " + std::to_string(it->second),
                       r.line);
  }
  return out;
}

std::vector<LossCurve> parse_curves(std::string_view bytes, Format format) {
  const auto records = parse_curve_records(bytes, format);
  struct Acc {
    double first = 0.0;
    double log_sum = 0.0;
    std::size_t count = 0;
    std::optional<std::uint64_t> steps;
  };
  std::map<std::string, std::map<std::uint64_t, Acc>> grouped;
  for (const auto& r : records) {
    Acc& a = grouped[r.model_id][r.dataset_size];
    if (a.count++ == 0) a.first = r.test_loss;
    a.log_sum += std::log(r.test_loss);
    if (r.steps) a.steps = r.steps;
  }
  std::vector<LossCurve> out;
  for (const auto& [id, sizes] : grouped) {
    std::vector<LossObservation> obs;
    for (const auto& [size, a] : sizes) {
      const double loss = a.count == 1 ? a.first : std::exp(a.log_sum / static_cast<double>(a.count));
      obs.push_back({size, loss, a.steps});
    }
    out.push_back(make_curve(id, std::move(obs)));
  }
  return out;
}

std::string write_curves(const std::vector<LossCurve>& curves, Format format) {
  if (format == Format::CSV) {
    std::string s = std::string(kCurveCsvHeader) + "\n";
    for (const auto& c : curves)
      for (const auto& o : c.observations)
        s += csv_field(c.model_id) + "," + std::to_string(o.dataset_size) + "," + fmt_real(o.test_loss) + "," +
             (o.steps ? std::to_string(*o.steps) : "") + ",\n";
    return s;
  }
  ordered_json j = header("curves");
  ordered_json recs = ordered_json::array();
  for (const auto& c : curves) {
    for (const auto& o : c.observations) {
      ordered_json r;
      r["model_id"] = c.model_id;
      r["dataset_size"] = o.dataset_size;
      r["test_loss"] = jreal(o.test_loss);
      r["steps"] = o.steps ? ordered_json(*o.steps) : ordered_json(nullptr);
      r["seed"] = nullptr;
      recs.push_back(r);
    }
  }
  j["records"] = recs;
  return dump(j);
}

// ---------------------------------------------------------------------------
// Fit reports

std::string write_report(const std::vector<FitReport>& reports, Format format) {
  if (format == Format::CSV) {
    std::string s = "model_id,B,E,beta,t,f_type,f0,kappa,objective_value,residual_std,converged,degenerate,"
                    "n_restarts_used\n";
    for (const auto& r : reports) {
      const auto& p = r.result.params;
      const auto* sf = std::get_if<SurrogateF>(&p.f_mode);
      s += csv_field(r.model_id) + "," + fmt_real(p.B) + "," + fmt_real(p.E) + "," + fmt_real(p.beta) + "," +
           fmt_real(p.t) + "," + (sf ? "surrogate," + fmt_real(sf->f0) + "," + fmt_real(sf->kappa) : "kernel,,") +
           "," + fmt_real(r.result.objective_value) + "," + fmt_real(r.result.residual_std) + "," +
           (r.result.converged ? "true" : "false") + "," + (r.result.degenerate ? "true" : "false") + "," +
           std::to_string(r.result.n_restarts_used) + "\n";
    }
    return s;
  }
  ordered_json j = header("fit");
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json e;
    e["model_id"] = r.model_id;
    e["params"] = params_json(r.result.params);
    e["objective_value"] = jreal(r.result.objective_value);
    e["residual_std"] = jreal(r.result.residual_std);
    e["converged"] = r.result.converged;
    e["degenerate"] = r.result.degenerate;
    e["n_restarts_used"] = r.result.n_restarts_used;
    arr.push_back(e);
  }
  j["results"] = arr;
  return dump(j);
}

std::vector<FitReport> parse_fit_reports(std::string_view bytes) {
  return wrap("fit report", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "fit");
    std::vector<FitReport> out;
    for (const auto& item : top.array("results")) {
      Reader r(item, "results[]");
      FitReport f;
      f.model_id = r.str("model_id");
      f.result.params = params_from(r.object("params"));
      f.result.objective_value = r.real("objective_value");
      f.result.residual_std = r.real("residual_std");
      f.result.converged = r.boolean("converged");
      f.result.degenerate = r.boolean("degenerate");
      f.result.n_restarts_used = r.uint("n_restarts_used");
      r.finish();
      out.push_back(std::move(f));
    }
    top.finish();
    return out;
  });
}

// ---------------------------------------------------------------------------
// Selection reports

std::string write_report(const std::vector<SelectionReport>& reports, Format format) {
  if (format == Format::CSV) {
    std::string s = "model_id,d_full,r,a,s,break_reason,estimator,trace_sizes\n";
    for (const auto& r : reports) {
      std::string sizes;
      for (std::size_t i = 0; i < r.trace.size(); ++i) sizes += (i ? ";" : "") + std::to_string(r.trace[i].size);
      s += csv_field(r.model_id) + "," + std::to_string(r.d_full) + "," + fmt_real(r.predicted_score) + "," +
           std::to_string(r.iterations) + "," + fmt_real(r.data_fraction) + "," + to_string(r.break_reason) + "," +
           to_string(r.estimator.kind) + "," + sizes + "\n";
    }
    return s;
  }
  ordered_json j = header("selection");
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json e;
    e["model_id"] = r.model_id;
    e["d_full"] = r.d_full;
    e["r"] = jreal(r.predicted_score);
    e["s"] = jreal(r.data_fraction);
    e["a"] = r.iterations;
    e["break_reason"] = to_string(r.break_reason);
    ordered_json trace = ordered_json::array();
    for (const auto& t : r.trace) {
      ordered_json te;
      te["size"] = t.size;
      te["loss"] = jreal(t.loss);
      te["signal"] = t.signal ? jreal(*t.signal) : ordered_json(nullptr);
      ordered_json dev = ordered_json::array();
      for (double d : t.deviations) dev.push_back(jreal(d));
      te["deviations"] = dev;
      trace.push_back(te);
    }
    e["trace"] = trace;
    e["estimator"] = estimator_json(r.estimator);
    arr.push_back(e);
  }
  j["reports"] = arr;
  return dump(j);
}

std::vector<SelectionReport> parse_selection_reports(std::string_view bytes) {
  return wrap("selection report", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "selection");
    std::vector<SelectionReport> out;
    for (const auto& item : top.array("reports")) {
      Reader r(item, "reports[]");
      SelectionReport s;
      s.model_id = r.str("model_id");
      s.d_full = r.uint("d_full");
      s.predicted_score = r.real("r");
      s.data_fraction = r.real("s");
      s.iterations = r.uint("a");
      s.break_reason = break_reason_from_string(r.str("break_reason"));
      for (const auto& t : r.array("trace")) {
        Reader tr(t, "trace[]");
        TraceEntry e;
        e.size = tr.uint("size");
        e.loss = tr.real("loss");
        if (tr.has("signal")) e.signal = tr.real("signal");
        else tr.skip("signal");
        e.deviations = tr.reals("deviations");
        tr.finish();
        s.trace.push_back(std::move(e));
      }
      s.estimator = estimator_from(r.object("estimator"));
      r.finish();
      out.push_back(std::move(s));
    }
    top.finish();
    return out;
  });
}

// ---------------------------------------------------------------------------
// Ranking

std::string write_report(const Ranking& ranking, Format format) {
  if (format == Format::CSV) {
    std::string s = "rank,model_id,score\n";
    for (std::size_t i = 0; i < ranking.entries.size(); ++i)
      s += std::to_string(i + 1) + "," + csv_field(ranking.entries[i].model_id) + "," +
           fmt_real(ranking.entries[i].score) + "\n";
    return s;
  }
  ordered_json j = header("ranking");
  j["selected"] = ranking.selected;
  ordered_json arr = ordered_json::array();
  for (const auto& e : ranking.entries) arr.push_back({{"model_id", e.model_id}, {"score", jreal(e.score)}});
  j["entries"] = arr;
  return dump(j);
}

Ranking parse_ranking(std::string_view bytes, Format format) {
  Ranking out;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    expect_header(rows, "rank,model_id,score");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      expect_width(rows[i], 3);
      if (parse_int<std::size_t>(rows[i].fields[0], "rank", rows[i].line) != i)
        throw ParseError("line " + std::to_string(rows[i].line) + ": ranks must be 1, 2, ...", rows[i].line);
      out.entries.push_back({rows[i].fields[1], parse_real(rows[i].fields[2], "score", rows[i].line)});
    }
    if (!out.entries.empty()) out.selected = out.entries.front().model_id;
    return out;
  }
  return wrap("ranking", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "ranking");
    out.selected = top.str("selected");
    for (const auto& item : top.array("entries")) {
      Reader r(item, "entries[]");
      out.entries.push_back({r.str("model_id"), r.real("score")});
      r.finish();
    }
    top.finish();
    return out;
  });
}

// ---------------------------------------------------------------------------
// Bound

std::string write_report(const BoundReport& b, Format format) {
  if (format == Format::CSV) {
    std::string hs;
    for (std::size_t i = 0; i < b.h.size(); ++i) hs += (i ? ";" : "") + fmt_real(b.h[i]);
    return "empirical_loss,h,n,C,epsilon,xi_constant,base,hessian_term,xi_term,bound_value\n" +
           fmt_real(b.empirical_loss) + "," + hs + "," + std::to_string(b.n) + "," + fmt_real(b.C) + "," +
           fmt_real(b.epsilon) + "," + fmt_real(b.xi_constant) + "," + fmt_real(b.breakdown.base) + "," +
           fmt_real(b.breakdown.hessian_term) + "," + fmt_real(b.breakdown.xi_term) + "," + fmt_real(b.bound_value) +
           "\n";
  }
  ordered_json j = header("bound");
  j["empirical_loss"] = jreal(b.empirical_loss);
  ordered_json h = ordered_json::array();
  for (double v : b.h) h.push_back(jreal(v));
  j["h"] = h;
  j["n"] = b.n;
  j["C"] = jreal(b.C);
  j["epsilon"] = jreal(b.epsilon);
  j["xi_constant"] = jreal(b.xi_constant);
  j["bound_value"] = jreal(b.bound_value);
  j["term_breakdown"] = {{"base", jreal(b.breakdown.base)},
                         {"hessian_term", jreal(b.breakdown.hessian_term)},
                         {"xi_term", jreal(b.breakdown.xi_term)}};
  return dump(j);
}

BoundReport parse_bound_report(std::string_view bytes) {
  return wrap("bound report", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "bound");
    BoundReport b;
    b.empirical_loss = top.real("empirical_loss");
    b.h = top.reals("h");
    b.n = top.uint("n");
    b.C = top.real("C");
    b.epsilon = top.real("epsilon");
    b.xi_constant = top.real("xi_constant");
    b.bound_value = top.real("bound_value");
    Reader t = top.object("term_breakdown");
    b.breakdown.base = t.real("base");
    b.breakdown.hessian_term = t.real("hessian_term");
    b.breakdown.xi_term = t.real("xi_term");
    t.finish();
    top.finish();
    return b;
  });
}

// ---------------------------------------------------------------------------
// Cost

std::string write_report(const CostReport& c, Format format) {
  if (format == Format::CSV) {
    std::string s = "method,model_id,cost\n";
    for (const auto& [id, v] : c.breakdown.per_model)
      s += std::string(to_string(c.method)) + "," + csv_field(id) + "," + fmt_real(v) + "\n";
    s += std::string(to_string(c.method)) + ",TOTAL," + fmt_real(c.breakdown.total) + "\n";
    return s;
  }
  ordered_json j = header("cost");
  j["method"] = to_string(c.method);
  j["total"] = jreal(c.breakdown.total);
  ordered_json arr = ordered_json::array();
  for (const auto& [id, v] : c.breakdown.per_model) arr.push_back({{"model_id", id}, {"cost", jreal(v)}});
  j["per_model"] = arr;
  return dump(j);
}

CostReport parse_cost_report(std::string_view bytes, Format format) {
  CostReport c;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    expect_header(rows, "method,model_id,cost");
    bool total = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      expect_width(rows[i], 3);
      if (total) throw ParseError("line " + std::to_string(rows[i].line) + ": row after TOTAL", rows[i].line);
      try {
        c.method = cost_method_from_string(rows[i].fields[0]);
      } catch (const InvalidArgument& e) {
        throw ParseError("line " + std::to_string(rows[i].line) + ": " + e.what(), rows[i].line);
      }
      const double v = parse_real(rows[i].fields[2], "cost", rows[i].line);
      if (rows[i].fields[1] == "TOTAL") {
        c.breakdown.total = v;
        total = true;
      } else {
        c.breakdown.per_model.emplace_back(rows[i].fields[1], v);
      }
    }
    if (!total) throw ParseError("cost CSV has no TOTAL row", 0);
    return c;
  }
  return wrap("cost report", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "cost");
    c.method = cost_method_from_string(top.str("method"));
    c.breakdown.total = top.real("total");
    for (const auto& item : top.array("per_model")) {
      Reader r(item, "per_model[]");
      c.breakdown.per_model.emplace_back(r.str("model_id"), r.real("cost"));
      r.finish();
    }
    top.finish();
    return c;
  });
}

std::string write_pareto_csv(const std::vector<CostPoint>& points) {
  std::string s = "cost,performance\n";
  for (const auto& p : points) s += fmt_real(p.cost) + "," + fmt_real(p.performance) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

std::string write_report(const MetricsReport& m, Format format) {
  const auto opt = [](const std::optional<double>& v) { return v ? fmt_real(*v) : std::string(); };
  if (format == Format::CSV)
    return "n,pearson,relative_accuracy,rmse\n" + std::to_string(m.n) + "," + opt(m.pearson) + "," +
           opt(m.relative_accuracy) + "," + fmt_real(m.rmse) + "\n";
  ordered_json j = header("metrics");
  j["n"] = m.n;
  j["pearson"] = m.pearson ? jreal(*m.pearson) : ordered_json(nullptr);
  j["relative_accuracy"] = m.relative_accuracy ? jreal(*m.relative_accuracy) : ordered_json(nullptr);
  j["rmse"] = jreal(m.rmse);
  return dump(j);
}

MetricsReport parse_metrics_report(std::string_view bytes, Format format) {
  MetricsReport m;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    expect_header(rows, "n,pearson,relative_accuracy,rmse");
    if (rows.size() != 2) throw ParseError("metrics CSV must have exactly one data row", 0);
    const auto& r = rows[1];
    expect_width(r, 4);
    m.n = parse_int<std::size_t>(r.fields[0], "n", r.line);
    if (!r.fields[1].empty()) m.pearson = parse_real(r.fields[1], "pearson", r.line);
    if (!r.fields[2].empty()) m.relative_accuracy = parse_real(r.fields[2], "relative_accuracy", r.line);
    m.rmse = parse_real(r.fields[3], "rmse", r.line);
    return m;
  }
  return wrap("metrics report", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "metrics");
    m.n = top.uint("n");
    if (top.has("pearson")) m.pearson = top.real("pearson");
    else top.skip("pearson");
    if (top.has("relative_accuracy")) m.relative_accuracy = top.real("relative_accuracy");
    else top.skip("relative_accuracy");
    m.rmse = top.real("rmse");
    top.finish();
    return m;
  });
}

// ---------------------------------------------------------------------------
// Sweep

std::string write_report(const SweepTable& t, Format format) {
  if (format == Format::CSV) {
    const bool toy = !t.lrs.empty();
    std::string s = toy ? "lr,batch_size,gamma" : "gamma";
    for (double tau : t.taus) s += ",tau=" + fmt_real(tau);
    s += "\n";
    // cells are gamma-major, then tau, then lr, then batch
    const std::size_t nl = toy ? t.lrs.size() : 1, nb = toy ? t.batch_sizes.size() : 1;
    const auto cell = [&](std::size_t g, std::size_t k, std::size_t l, std::size_t b) -> const SweepCell& {
      return t.cells.at(((g * t.taus.size() + k) * nl + l) * nb + b);
    };
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t g = 0; g < t.gammas.size(); ++g) {
          if (toy) s += fmt_real(t.lrs[l]) + "," + std::to_string(t.batch_sizes[b]) + ",";
          s += std::to_string(t.gammas[g]);
          for (std::size_t k = 0; k < t.taus.size(); ++k) {
            const auto& c = cell(g, k, l, b);
            s += "," + (c.pearson ? fmt_real(*c.pearson) : std::string());
          }
          s += "\n";
        }
      }
    }
    return s;
  }
  ordered_json j = header("sweep");
  ordered_json g = ordered_json::array(), tau = ordered_json::array(), lr = ordered_json::array(),
               bs = ordered_json::array();
  for (auto v : t.gammas) g.push_back(v);
  for (auto v : t.taus) tau.push_back(jreal(v));
  for (auto v : t.lrs) lr.push_back(jreal(v));
  for (auto v : t.batch_sizes) bs.push_back(v);
  j["gammas"] = g;
  j["taus"] = tau;
  j["lrs"] = lr;
  j["batch_sizes"] = bs;
  ordered_json cells = ordered_json::array();
  for (const auto& c : t.cells) {
    ordered_json e;
    e["gamma"] = c.gamma;
    e["tau"] = jreal(c.tau);
    e["lr"] = c.lr ? jreal(*c.lr) : ordered_json(nullptr);
    e["batch_size"] = c.batch_size ? ordered_json(*c.batch_size) : ordered_json(nullptr);
    e["pearson"] = c.pearson ? jreal(*c.pearson) : ordered_json(nullptr);
    e["relative_accuracy"] = c.relative_accuracy ? jreal(*c.relative_accuracy) : ordered_json(nullptr);
    e["error"] = c.error;
    cells.push_back(e);
  }
  j["cells"] = cells;
  return dump(j);
}

SweepTable parse_sweep_table(std::string_view bytes, Format format) {
  SweepTable t;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    if (rows.empty()) throw ParseError("empty sweep CSV", 0);
    const auto& h = rows[0].fields;
    const bool toy = !h.empty() && h[0] == "lr";
    const std::size_t lead = toy ? 3 : 1;
    if (h.size() <= lead || (toy && (h[1] != "batch_size" || h[2] != "gamma")) || (!toy && h[0] != "gamma"))
      throw ParseError("line " + std::to_string(rows[0].line) + ": expected header 'gamma,tau=...'", rows[0].line);
    for (std::size_t k = lead; k < h.size(); ++k) {
      if (h[k].rfind("tau=", 0) != 0)
        throw ParseError("line " + std::to_string(rows[0].line) + ": bad tau column '" + h[k] + "'", rows[0].line);
      t.taus.push_back(parse_real(std::string_view(h[k]).substr(4), "tau", rows[0].line));
    }
    struct Row {
      double lr;
      std::size_t batch, gamma;
      std::vector<std::optional<double>> values;
    };
    std::vector<Row> data;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      expect_width(r, lead + t.taus.size());
      Row row{0.0, 0, 0, {}};
      if (toy) {
        row.lr = parse_real(r.fields[0], "lr", r.line);
        row.batch = parse_int<std::size_t>(r.fields[1], "batch_size", r.line);
      }
      row.gamma = parse_int<std::size_t>(r.fields[lead - 1], "gamma", r.line);
      for (std::size_t k = lead; k < r.fields.size(); ++k)
        row.values.push_back(r.fields[k].empty() ? std::nullopt
                                                 : std::optional<double>(parse_real(r.fields[k], "pearson", r.line)));
      data.push_back(std::move(row));
      if (std::find(t.gammas.begin(), t.gammas.end(), data.back().gamma) == t.gammas.end())
        t.gammas.push_back(data.back().gamma);
      if (toy) {
        if (std::find(t.lrs.begin(), t.lrs.end(), data.back().lr) == t.lrs.end()) t.lrs.push_back(data.back().lr);
        if (std::find(t.batch_sizes.begin(), t.batch_sizes.end(), data.back().batch) == t.batch_sizes.end())
          t.batch_sizes.push_back(data.back().batch);
      }
    }
    const std::size_t nl = toy ? t.lrs.size() : 1, nb = toy ? t.batch_sizes.size() : 1;
    if (data.size() != nl * nb * t.gammas.size()) throw ParseError("sweep CSV grid is incomplete", 0);
    t.cells.resize(t.gammas.size() * t.taus.size() * nl * nb);
    for (const auto& row : data) {
      const auto gi = static_cast<std::size_t>(std::find(t.gammas.begin(), t.gammas.end(), row.gamma) - t.gammas.begin());
      const std::size_t li =
          toy ? static_cast<std::size_t>(std::find(t.lrs.begin(), t.lrs.end(), row.lr) - t.lrs.begin()) : 0;
      const std::size_t bi =
          toy ? static_cast<std::size_t>(std::find(t.batch_sizes.begin(), t.batch_sizes.end(), row.batch) -
                                         t.batch_sizes.begin())
              : 0;
      for (std::size_t k = 0; k < t.taus.size(); ++k) {
        SweepCell& c = t.cells[((gi * t.taus.size() + k) * nl + li) * nb + bi];
        c.gamma = row.gamma;
        c.tau = t.taus[k];
        if (toy) {
          c.lr = row.lr;
          c.batch_size = row.batch;
        }
        c.pearson = row.values[k];
      }
    }
    return t;
  }
  return wrap("sweep table", [&] {
    const json doc = parse_json(bytes);
    Reader top(doc, "");
    check_schema(top, "sweep");
    for (auto v : top.uints("gammas")) t.gammas.push_back(v);
    t.taus = top.reals("taus");
    t.lrs = top.reals("lrs");
    for (auto v : top.uints("batch_sizes")) t.batch_sizes.push_back(v);
    for (const auto& item : top.array("cells")) {
      Reader r(item, "cells[]");
      SweepCell c;
      c.gamma = r.uint("gamma");
      c.tau = r.real("tau");
      if (r.has("lr")) c.lr = r.real("lr");
      else r.skip("lr");
      if (r.has("batch_size")) c.batch_size = r.uint("batch_size");
      else r.skip("batch_size");
      if (r.has("pearson")) c.pearson = r.real("pearson");
      else r.skip("pearson");
      if (r.has("relative_accuracy")) c.relative_accuracy = r.real("relative_accuracy");
      else r.skip("relative_accuracy");
      c.error = r.str("error");
      r.finish();
      t.cells.push_back(std::move(c));
    }
    top.finish();
    return t;
  });
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const char* penalty_name(Penalty p) { return p == Penalty::Huber ? "huber" : "squared"; }
Penalty penalty_from(const std::string& s) {
  if (s == "squared") return Penalty::Squared;
  if (s == "huber") return Penalty::Huber;
  throw InvalidArgument("unknown penalty '" + s + "' (expected squared or huber)");
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  return wrap("config", [&] {
    const json doc = parse_json(text);
    RunConfig c;
    Reader top(doc, "");
    top.uint("seed", c.seed);
    top.str("out_dir", c.out_dir);
    top.boolean("exact_match", c.exact_match);
    if (top.has("fit")) {
      Reader f = top.object("fit");
      f.uint("t_grid_points", c.fit.t_grid_points);
      f.real("t_grid_min", c.fit.t_grid_min);
      f.real("t_grid_max", c.fit.t_grid_max);
      f.uint("restarts", c.fit.restarts);
      std::string pen = penalty_name(c.fit.penalty);
      f.str("penalty", pen);
      c.fit.penalty = penalty_from(pen);
      f.real("huber_delta", c.fit.huber_delta);
      f.real("surrogate_kappa", c.fit.surrogate_kappa);
      if (f.has("fixed_f0")) c.fit.fixed_f0 = f.real("fixed_f0");
      else f.skip("fixed_f0");
      f.uint("max_evaluations", c.fit.max_evaluations);
      f.finish();
    }
    if (top.has("selection")) {
      Reader s = top.object("selection");
      s.uint("gamma", c.selection.gamma);
      s.real("tau", c.selection.tau);
      s.uint("floor", c.selection.floor);
      s.real("start_fraction", c.selection.start_fraction);
      std::string name = to_string(c.polarity);
      s.str("polarity", name);
      c.polarity = polarity_from_string(name);
      name = to_string(c.selection.estimator);
      s.str("estimator", name);
      c.selection.estimator = estimator_kind_from_string(name);
      name = to_string(c.selection.signal_norm);
      s.str("signal_norm", name);
      c.selection.signal_norm = signal_norm_from_string(name);
      s.finish();
    }
    if (top.has("bound")) {
      Reader b = top.object("bound");
      b.real("epsilon", c.bound.epsilon);
      b.real("xi_constant", c.bound.xi_constant);
      b.real("slack", c.bound.slack);
      if (b.has("C")) c.bound.C = b.real("C");
      else b.skip("C");
      if (b.has("sigmas")) c.bound.sigmas = b.reals("sigmas");
      else b.skip("sigmas");
      b.finish();
      if (!(c.bound.epsilon > 0.0)) throw InvalidArgument("bound.epsilon must be positive");
      if (!(c.bound.xi_constant >= 0.0)) throw InvalidArgument("bound.xi_constant must be nonnegative");
    }
    if (top.has("cost")) {
      Reader k = top.object("cost");
      k.uint("epochs", c.cost.epochs);
      k.uint("hp_rounds", c.cost.hp_rounds);
      k.real("sub_fraction", c.cost.sub_fraction);
      if (k.has("param_counts")) {
        Reader pc = k.object("param_counts");
        for (const auto& [id, v] : doc.at("cost").at("param_counts").items()) c.cost.param_counts[id] = pc.uint(id);
        pc.finish();
      } else {
        k.skip("param_counts");
      }
      k.finish();
    }
    for (const char* key : {"fit", "selection", "bound", "cost"}) top.skip(key);
    top.finish();
    if (c.selection.gamma < 2) throw InvalidArgument("selection.gamma must be at least 2");
    if (!(c.selection.tau > 0.0)) throw InvalidArgument("selection.tau must be positive");
    c.fit.seed = c.seed;
    c.selection.seed = c.seed;
    c.selection.fit = c.fit;
    return c;
  });
}

std::string write_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["exact_match"] = c.exact_match;
  j["fit"] = {{"t_grid_points", c.fit.t_grid_points},
              {"t_grid_min", c.fit.t_grid_min},
              {"t_grid_max", c.fit.t_grid_max},
              {"restarts", c.fit.restarts},
              {"penalty", penalty_name(c.fit.penalty)},
              {"huber_delta", c.fit.huber_delta},
              {"surrogate_kappa", c.fit.surrogate_kappa},
              {"fixed_f0", c.fit.fixed_f0 ? json(*c.fit.fixed_f0) : json(nullptr)},
              {"max_evaluations", c.fit.max_evaluations}};
  j["selection"] = {{"gamma", c.selection.gamma},
                    {"tau", c.selection.tau},
                    {"floor", c.selection.floor},
                    {"start_fraction", c.selection.start_fraction},
                    {"polarity", to_string(c.polarity)},
                    {"estimator", to_string(c.selection.estimator)},
                    {"signal_norm", to_string(c.selection.signal_norm)}};
  j["bound"] = {{"epsilon", c.bound.epsilon},
                {"xi_constant", c.bound.xi_constant},
                {"slack", c.bound.slack},
                {"C", c.bound.C ? json(*c.bound.C) : json(nullptr)},
                {"sigmas", c.bound.sigmas}};
  json pc = json::object();
  for (const auto& [id, v] : c.cost.param_counts) pc[id] = v;
  j["cost"] = {{"epochs", c.cost.epochs},
               {"hp_rounds", c.cost.hp_rounds},
               {"sub_fraction", c.cost.sub_fraction},
               {"param_counts", pc}};
  return j.dump(2) + "\n";
}

PoolGenSpec parse_pool_spec(std::string_view text) {
  return wrap("pool spec", [&] {
    const json doc = parse_json(text);
    PoolGenSpec p;
    Reader r(doc, "");
    r.uint("n_models", p.n_models);
    r.uint("d_full", p.d_full);
    r.real("log_noise_sigma", p.log_noise_sigma);
    r.uint("seed", p.seed);
    const auto range = [&](const char* key, ParamRange& out) {
      if (!r.has(key)) {
        r.skip(key);
        return;
      }
      const auto v = r.reals(key);
      if (v.size() != 2) throw ParseError(r.where(key) + " must be [lo, hi]", 0);
      out = {v[0], v[1]};
    };
    range("B", p.B);
    range("E", p.E);
    range("beta", p.beta);
    range("F0", p.F0);
    range("param_count", p.param_count);
    r.finish();
    return p;
  });
}

std::string write_pool_spec(const PoolGenSpec& p) {
  ordered_json j;
  j["n_models"] = p.n_models;
  j["d_full"] = p.d_full;
  j["log_noise_sigma"] = p.log_noise_sigma;
  j["seed"] = p.seed;
  j["B"] = {p.B.lo, p.B.hi};
  j["E"] = {p.E.lo, p.E.hi};
  j["beta"] = {p.beta.lo, p.beta.hi};
  j["F0"] = {p.F0.lo, p.F0.hi};
  j["param_count"] = {p.param_count.lo, p.param_count.hi};
  return dump(j);
}

// ---------------------------------------------------------------------------
// Files and run directories

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

std::string make_run_id(const std::string& command, const std::string& config_hash, std::uint64_t seed,
                        const std::vector<RunInput>& inputs) {
  std::string key = command + "\n" + config_hash + "\n" + std::to_string(seed) + "\n";
  for (const auto& in : inputs) key += in.name + "=" + in.sha256 + "\n";
  return command + "-" + sha256_hex(key).substr(0, 12);
}

std::string write_manifest(const RunManifest& m) {
  ordered_json j = header("manifest");
  j["run_id"] = m.run_id;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  ordered_json ins = ordered_json::array();
  for (const auto& i : m.inputs) ins.push_back({{"name", i.name}, {"sha256", i.sha256}});
  j["inputs"] = ins;
  ordered_json v;
  for (const auto& [k, val] : m.versions) v[k] = val;
  j["versions"] = v;
  j["created_at"] = m.created_at;
  return dump(j);
}

std::filesystem::path create_run_dir(const std::filesystem::path& out_dir, const RunManifest& manifest) {
  if (manifest.run_id.empty()) throw InvalidArgument("run directory: empty run id");
  const auto dir = out_dir / manifest.run_id;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  RunManifest m = manifest;
  if (m.created_at.empty()) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    m.created_at = buf;
  }
  write_file(dir / "manifest.json", write_manifest(m));
  return dir;
}

std::map<std::string, std::string> component_versions() {
  return {{"lens", "0.1.0"},
          {"schema", std::to_string(kSchemaVersion)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

}  // namespace lens

// ---------------------------------------------------------------------------
// Toy-network inputs

namespace lens {

Dataset parse_dataset(std::string_view bytes, Format format) {
  Dataset out;
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    if (rows.empty()) throw ParseError("empty dataset CSV", 0);
    const auto& h = rows[0].fields;
    if (h.size() < 2 || h.back() != "y")
      throw ParseError("line " + std::to_string(rows[0].line) + ": expected header 'x0,...,y'", rows[0].line);
    for (std::size_t k = 0; k + 1 < h.size(); ++k)
      if (h[k] != "x" + std::to_string(k))
        throw ParseError("line " + std::to_string(rows[0].line) + ": column " + std::to_string(k + 1) +
                             " must be 'x" + std::to_string(k) + "'",
                         rows[0].line);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      expect_width(rows[i], h.size());
      Sample s;
      for (std::size_t k = 0; k + 1 < h.size(); ++k) s.x.push_back(parse_real(rows[i].fields[k], "x", rows[i].line));
      s.y = parse_real(rows[i].fields.back(), "y", rows[i].line);
      out.push_back(std::move(s));
    }
    return out;
  }
  return wrap("dataset", [&] {
    const json doc = parse_json(bytes);
    if (!doc.is_array()) throw ParseError("dataset JSON must be an array of samples", 0);
    std::size_t idx = 0;
    for (const auto& item : doc) {
      ++idx;
      Reader r(item, "samples[" + std::to_string(idx - 1) + "]");
      Sample s;
      s.x = r.reals("x");
      s.y = r.real("y");
      r.finish();
      if (!out.empty() && s.x.size() != out.front().x.size())
        throw ParseError("record " + std::to_string(idx) + ": inconsistent input dimension", idx);
      out.push_back(std::move(s));
    }
    return out;
  });
}

std::string write_dataset(const Dataset& data, Format format) {
  if (format == Format::CSV) {
    const std::size_t d = data.empty() ? 0 : data.front().x.size();
    std::string s;
    for (std::size_t k = 0; k < d; ++k) s += "x" + std::to_string(k) + ",";
    s += "y\n";
    for (const auto& smp : data) {
      for (double v : smp.x) s += fmt_real(v) + ",";
      s += fmt_real(smp.y) + "\n";
    }
    return s;
  }
  ordered_json arr = ordered_json::array();
  for (const auto& smp : data) {
    ordered_json x = ordered_json::array();
    for (double v : smp.x) x.push_back(jreal(v));
    arr.push_back({{"x", x}, {"y", jreal(smp.y)}});
  }
  return dump(arr);
}

ToyNetwork parse_network(std::string_view text) {
  return wrap("network", [&] {
    const json doc = parse_json(text);
    Reader r(doc, "");
    NetworkSpec spec;
    std::string name = to_string(spec.architecture);
    r.str("architecture", name);
    spec.architecture = architecture_from_string(name);
    for (auto v : r.uints("layer_dims")) spec.layer_dims.push_back(v);
    name = to_string(spec.activation);
    r.str("activation", name);
    spec.activation = activation_from_string(name);
    r.real("init_scale", spec.init_scale);
    r.uint("seed", spec.seed);
    validate(spec);
    ToyNetwork net = build_toy_network(spec);
    std::vector<double> weights(net.weights().begin(), net.weights().end());
    if (r.has("weights")) weights = r.reals("weights");
    else r.skip("weights");
    std::vector<double> pre = weights;
    if (r.has("pretrained_weights")) pre = r.reals("pretrained_weights");
    else r.skip("pretrained_weights");
    r.finish();
    ToyNetwork out = ToyNetwork::from_weights(spec, pre).rebased();
    if (weights.size() != out.param_count())
      throw InvalidArgument("network: expected " + std::to_string(out.param_count()) + " weights, got " +
                            std::to_string(weights.size()));
    std::copy(weights.begin(), weights.end(), out.weights().begin());
    return out;
  });
}

std::string write_network(const ToyNetwork& net) {
  const auto& spec = net.spec();
  ordered_json j;
  j["architecture"] = to_string(spec.architecture);
  j["layer_dims"] = spec.layer_dims;
  j["activation"] = to_string(spec.activation);
  j["init_scale"] = jreal(spec.init_scale);
  j["seed"] = spec.seed;
  const auto arr = [](std::span<const double> w) {
    ordered_json a = ordered_json::array();
    for (double v : w) a.push_back(jreal(v));
    return a;
  };
  j["weights"] = arr(net.weights());
  j["pretrained_weights"] = net.has_pretrained() ? arr(net.pretrained()) : ordered_json(nullptr);
  return dump(j);
}

std::map<std::string, double> parse_score_table(std::string_view bytes, Format format) {
  std::map<std::string, double> out;
  const auto put = [&](const std::string& id, double v, std::size_t line) {
    if (!std::isfinite(v)) throw ParseError("entry " + std::to_string(line) + ": value for '" + id + "' is not finite", line);
    if (!out.emplace(id, v).second)
      throw ParseError("entry " + std::to_string(line) + ": duplicate model_id '" + id + "'", line);
  };
  if (format == Format::CSV) {
    const auto rows = read_csv(bytes);
    expect_header(rows, "model_id,value");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      expect_width(rows[i], 2);
      put(rows[i].fields[0], parse_real(rows[i].fields[1], "value", rows[i].line), rows[i].line);
    }
    return out;
  }
  const json doc = parse_json(bytes);
  if (doc.is_object() && doc.contains("kind")) {
    std::size_t i = 0;
    for (const auto& r : parse_selection_reports(bytes)) put(r.model_id, r.predicted_score, ++i);
    return out;
  }
  if (!doc.is_object()) throw ParseError("score table JSON must be an object of model_id: value", 0);
  std::size_t i = 0;
  for (const auto& [id, v] : doc.items()) {
    ++i;
    if (!v.is_number()) throw ParseError("entry " + std::to_string(i) + ": value for '" + id + "' must be a number", i);
    put(id, v.get<double>(), i);
  }
  return out;
}

}  // namespace lens

namespace lens {

CostInputFile parse_cost_inputs(std::string_view text) {
  return wrap("cost inputs", [&] {
    const json doc = parse_json(text);
    Reader r(doc, "");
    CostInputFile in;
    in.d_full = r.uint("d_full");
    r.uint("epochs", in.epochs);
    r.uint("hp_rounds", in.hp_rounds);
    r.real("sub_fraction", in.sub_fraction);
    r.str("selection_reports", in.selection_reports);
    std::set<std::string> ids;
    for (const auto& item : r.array("models")) {
      Reader m(item, "models[" + std::to_string(in.models.size()) + "]");
      CostInputModel c;
      c.model_id = m.str("model_id");
      m.uint("param_count", c.param_count);
      if (m.has("performance")) c.performance = m.real("performance");
      else m.skip("performance");
      if (m.has("executed_sizes")) c.executed_sizes = m.uints("executed_sizes");
      else m.skip("executed_sizes");
      m.finish();
      if (!ids.insert(c.model_id).second) throw ParseError("duplicate model_id '" + c.model_id + "'", in.models.size() + 1);
      in.models.push_back(std::move(c));
    }
    r.finish();
    if (in.d_full == 0) throw InvalidArgument("d_full must be positive");
    if (in.models.empty()) throw InvalidArgument("no models");
    return in;
  });
}

}  // namespace lens
