#include "sapphire/bench.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/rng.hpp"

namespace sapphire::bench {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- parsing

std::string child(const std::string& path, const std::string& key) {
  return path + "." + key;
}
std::string child(const std::string& path, std::size_t index) {
  return path + "[" + std::to_string(index) + "]";
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw SpecError(path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw SpecError(child(path, key), "unknown field");
  }
}

double get_number(const json& j, const char* key, const std::string& path,
                  std::optional<double> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw SpecError(child(path, key), "required field is missing");
  }
  const auto& v = j.at(key);
  if (!v.is_number()) throw SpecError(child(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw SpecError(child(path, key), "must be finite");
  return x;
}

std::uint64_t get_count(const json& j, const char* key, const std::string& path,
                        std::optional<std::uint64_t> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw SpecError(child(path, key), "required field is missing");
  }
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 &&
                                 !v.is_number_unsigned()))
    throw SpecError(child(path, key), "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string get_string(const json& j, const char* key, const std::string& path,
                       std::optional<std::string> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw SpecError(child(path, key), "required field is missing");
  }
  const auto& v = j.at(key);
  if (!v.is_string()) throw SpecError(child(path, key), "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const char* key, const std::string& path, bool fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw SpecError(child(path, key), "expected a boolean");
  return v.get<bool>();
}

LossKind parse_loss(const json& j, const std::string& path, double& nu) {
  require_object(j, path);
  reject_unknown(j, path, {"kind", "nu"});
  const auto kind = get_string(j, "kind", path);
  nu = get_number(j, "nu", path, 0.0);
  if (nu < 0.0) throw SpecError(child(path, "nu"), "must be >= 0");
  if (kind == "squared") return LossKind::squared;
  if (kind == "logistic") return LossKind::logistic;
  throw SpecError(child(path, "kind"), "expected \"squared\" or \"logistic\"");
}

Regularizer parse_regularizer(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"kind", "lambda", "a", "gamma"});
  const auto kind = get_string(j, "kind", path);
  try {
    if (kind == "none") return Regularizer::none();
    if (kind == "l1") return Regularizer::l1(get_number(j, "lambda", path));
    if (kind == "scad")
      return Regularizer::scad(get_number(j, "lambda", path), get_number(j, "a", path, 3.7));
    if (kind == "mcp")
      return Regularizer::mcp(get_number(j, "lambda", path), get_number(j, "gamma", path, 3.0));
  } catch (const SpecError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw SpecError(path, e.what());
  }
  throw SpecError(child(path, "kind"), "expected one of none, l1, scad, mcp");
}

SyntheticParams parse_synthetic(const json& j, const std::string& path,
                                std::uint64_t default_seed) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"n", "p", "condition_number", "support_size", "noise_std", "task", "seed"});
  SyntheticParams s;
  s.n = get_count(j, "n", path);
  s.p = get_count(j, "p", path);
  if (s.n == 0) throw SpecError(child(path, "n"), "must be >= 1");
  if (s.p == 0) throw SpecError(child(path, "p"), "must be >= 1");
  s.condition_number = get_number(j, "condition_number", path, 1.0);
  if (s.condition_number < 1.0)
    throw SpecError(child(path, "condition_number"), "must be >= 1");
  s.support_size = get_count(j, "support_size", path, s.p);
  if (s.support_size > s.p) throw SpecError(child(path, "support_size"), "exceeds p");
  s.noise_std = get_number(j, "noise_std", path, 0.0);
  if (s.noise_std < 0.0) throw SpecError(child(path, "noise_std"), "must be >= 0");
  const auto task = get_string(j, "task", path, std::string("lasso"));
  if (task == "lasso")
    s.task = SyntheticTask::lasso;
  else if (task == "logistic")
    s.task = SyntheticTask::logistic;
  else
    throw SpecError(child(path, "task"), "expected \"lasso\" or \"logistic\"");
  s.seed = get_count(j, "seed", path, default_seed);
  return s;
}

DatasetSource parse_dataset(const json& j, const std::string& path, const fs::path& base) {
  require_object(j, path);
  reject_unknown(j, path, {"path", "n_features", "positive_class", "normalize", "intercept"});
  DatasetSource d;
  fs::path given = get_string(j, "path", path);
  if (given.is_relative() && fs::exists(base / given)) given = base / given;
  d.path = resolve_dataset_path(given);
  if (j.contains("n_features")) d.n_features = get_count(j, "n_features", path);
  if (j.contains("positive_class")) d.positive_class = get_number(j, "positive_class", path);
  d.normalize = get_bool(j, "normalize", path, false);
  d.intercept = get_bool(j, "intercept", path, false);
  return d;
}

ProblemSpec parse_problem(const json& j, const std::string& path, const fs::path& base,
                          const json* loss_default, const json* reg_default,
                          std::uint64_t seed, std::size_t index) {
  require_object(j, path);
  reject_unknown(j, path, {"name", "synthetic", "dataset", "loss", "regularizer"});
  ProblemSpec p;
  p.name = get_string(j, "name", path, "problem" + std::to_string(index));
  if (p.name.empty()) throw SpecError(child(path, "name"), "must be nonempty");
  const bool has_syn = j.contains("synthetic");
  const bool has_data = j.contains("dataset");
  if (has_syn == has_data)
    throw SpecError(path, "exactly one of \"synthetic\" or \"dataset\" is required");
  if (has_syn) p.synthetic = parse_synthetic(j.at("synthetic"), child(path, "synthetic"), seed);
  if (has_data) p.dataset = parse_dataset(j.at("dataset"), child(path, "dataset"), base);

  const json* loss = j.contains("loss") ? &j.at("loss") : loss_default;
  if (!loss) throw SpecError(child(path, "loss"), "required field is missing");
  p.loss = parse_loss(*loss, j.contains("loss") ? child(path, "loss") : "$.loss", p.nu);
  const json* reg = j.contains("regularizer") ? &j.at("regularizer") : reg_default;
  if (reg)
    p.regularizer = parse_regularizer(*reg, j.contains("regularizer")
                                                ? child(path, "regularizer")
                                                : "$.regularizer");
  if (p.loss == LossKind::logistic && p.synthetic && p.synthetic->task != SyntheticTask::logistic)
    throw SpecError(child(path, "synthetic.task"), "logistic loss needs task \"logistic\"");
  return p;
}

Method parse_method(const std::string& s, const std::string& path) {
  if (s == "sapphire-ssn") return Method::sapphire_ssn;
  if (s == "sapphire-nyssn") return Method::sapphire_nyssn;
  if (s == "prox-svrg") return Method::prox_svrg;
  if (s == "saga") return Method::saga;
  throw SpecError(path, "unknown method \"" + s +
                            "\" (expected sapphire-ssn, sapphire-nyssn, prox-svrg, saga)");
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// ---------------------------------------------------------------- values

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* b = text.data();
  const char* e = b + text.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e || !std::isfinite(v))
    throw InvalidArgument("override " + key + ": expected a number, got \"" + text + "\"");
  return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw InvalidArgument("override " + key + ": expected a non-negative integer, got \"" +
                          text + "\"");
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw InvalidArgument("override " + key + ": expected true or false, got \"" + text + "\"");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? std::string("cell") : out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json optional_number(std::optional<double> v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

// ---------------------------------------------------------------- hashing

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(T v) {
    bytes(&v, sizeof v);
  }
  template <typename T>
  void array(std::span<const T> v) {
    value<std::uint64_t>(v.size());
    bytes(v.data(), v.size_bytes());
  }
  std::uint64_t digest() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return v;
}

// ---------------------------------------------------------------- traces

struct TraceRow {
  double stage = 0, passes = 0, seconds = 0, objective = 0, relative_error = 0;
  double grad_map_norm = 0, support_size = 0, apg_iters = 0;
};

std::vector<TraceRow> read_trace_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open trace " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw IoError(file.string() + ": unexpected trace header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double f[8];
    std::size_t start = 0;
    for (int k = 0; k < 8; ++k) {
      const auto comma = line.find(',', start);
      const auto field = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
      f[k] = parse_double("trace field", field);
      if (comma == std::string::npos && k < 7)
        throw IoError(file.string() + ": short trace row");
      start = comma + 1;
    }
    rows.push_back({f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7]});
  }
  return rows;
}

void write_trace_csv(const fs::path& file, const std::vector<TraceRecord>& trace,
                     double best, bool timing) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << kTraceHeader << '\n';
  char buf[512];
  for (const auto& r : trace) {
    if (!std::isfinite(r.objective)) continue;
    const auto rel = suboptimality_from_values(r.objective, best).relative;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.6f,%.17g,%.17g,%.17g,%zu,%zu\n", r.stage,
                  r.effective_passes, timing ? r.wall_seconds : 0.0, r.objective, rel,
                  r.grad_map_norm, r.support_size, r.apg_iters_total);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + file.string());
}

SolverConfig build_config(const ExperimentSpec& spec, const SolverSpec& solver,
                          const RunOptions& options, std::uint64_t seed) {
  SolverConfig cfg;
  cfg.budget = spec.budget;
  cfg.seed = seed;
  for (const auto& [k, v] : solver.overrides) apply_override(cfg, k, v);
  for (const auto& [k, v] : options.overrides) apply_override(cfg, k, v);
  if (options.strict_paper) cfg.apg.strict_paper = true;
  return cfg;
}

SolverResult dispatch(Method m, const GlmLoss& loss, const Regularizer& reg, SolverConfig cfg) {
  switch (m) {
    case Method::sapphire_ssn:
      cfg.precond = PreconditionerKind::ssn;
      return sapphire_run(loss, reg, cfg);
    case Method::sapphire_nyssn:
      cfg.precond = PreconditionerKind::nyssn;
      return sapphire_run(loss, reg, cfg);
    case Method::prox_svrg:
      return prox_svrg_run(loss, reg, cfg);
    case Method::saga:
      return saga_run(loss, reg, cfg);
  }
  throw InvalidArgument("unknown method");
}

std::string describe_loss(const ProblemSpec& p) {
  return p.loss == LossKind::squared ? "squared" : "logistic";
}

}  // namespace

const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::sapphire_ssn: return "sapphire-ssn";
    case Method::sapphire_nyssn: return "sapphire-nyssn";
    case Method::prox_svrg: return "prox-svrg";
    case Method::saga: return "saga";
  }
  return "unknown";
}

ExperimentSpec parse_experiment(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError("$", std::string("invalid JSON: ") + e.what());
  }
  const std::string root = "$";
  require_object(doc, root);
  reject_unknown(doc, root,
                 {"schema", "name", "description", "seed", "problem", "problems", "loss",
                  "regularizer", "solvers", "budget", "output_dir", "reference"});
  const auto schema = get_string(doc, "schema", root);
  if (schema != kExperimentSchema)
    throw SpecError("$.schema", "unsupported schema \"" + schema + "\" (expected \"" +
                                    kExperimentSchema + "\")");

  ExperimentSpec spec;
  spec.name = get_string(doc, "name", root, std::string("experiment"));
  spec.seed = get_count(doc, "seed", root, 0);

  const json* loss_default = doc.contains("loss") ? &doc.at("loss") : nullptr;
  const json* reg_default = doc.contains("regularizer") ? &doc.at("regularizer") : nullptr;
  if (doc.contains("problem") == doc.contains("problems"))
    throw SpecError(root, "exactly one of \"problem\" or \"problems\" is required");
  if (doc.contains("problem")) {
    spec.problems.push_back(parse_problem(doc.at("problem"), "$.problem", base_dir,
                                          loss_default, reg_default, spec.seed, 0));
  } else {
    const auto& arr = doc.at("problems");
    if (!arr.is_array() || arr.empty())
      throw SpecError("$.problems", "expected a nonempty array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      spec.problems.push_back(parse_problem(arr[i], child("$.problems", i), base_dir,
                                            loss_default, reg_default, spec.seed, i));
  }
  std::set<std::string> problem_names;
  for (std::size_t i = 0; i < spec.problems.size(); ++i)
    if (!problem_names.insert(spec.problems[i].name).second)
      throw SpecError(child("$.problems", i) + ".name", "duplicate problem name");

  if (!doc.contains("solvers")) throw SpecError("$.solvers", "required field is missing");
  const auto& solvers = doc.at("solvers");
  if (!solvers.is_array() || solvers.empty())
    throw SpecError("$.solvers", "at least one solver is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < solvers.size(); ++i) {
    const auto path = child("$.solvers", i);
    const auto& s = solvers[i];
    require_object(s, path);
    reject_unknown(s, path, {"name", "method", "config"});
    SolverSpec out;
    out.method = parse_method(get_string(s, "method", path), child(path, "method"));
    out.name = get_string(s, "name", path, std::string(to_string(out.method)));
    if (!names.insert(out.name).second) throw SpecError(child(path, "name"), "duplicate solver name");
    if (s.contains("config")) {
      const auto& c = s.at("config");
      require_object(c, child(path, "config"));
      SolverConfig probe;
      for (const auto& [k, v] : c.items()) {
        if (!v.is_primitive() || v.is_null())
          throw SpecError(child(child(path, "config"), k), "expected a scalar");
        try {
          apply_override(probe, k, scalar_text(v));
        } catch (const InvalidArgument& e) {
          throw SpecError(child(child(path, "config"), k), e.what());
        }
        out.overrides.emplace_back(k, scalar_text(v));
      }
    }
    spec.solvers.push_back(std::move(out));
  }

  if (doc.contains("budget")) {
    const auto& b = doc.at("budget");
    require_object(b, "$.budget");
    reject_unknown(b, "$.budget", {"max_passes", "max_seconds", "max_stages"});
    spec.budget.max_passes = get_number(b, "max_passes", "$.budget", 200.0);
    spec.budget.max_seconds = get_number(b, "max_seconds", "$.budget", 120.0);
    spec.budget.max_stages = get_count(b, "max_stages", "$.budget", spec.budget.max_stages);
  }
  if (!(spec.budget.max_passes > 0.0)) throw SpecError("$.budget.max_passes", "must be > 0");
  if (!(spec.budget.max_seconds > 0.0)) throw SpecError("$.budget.max_seconds", "must be > 0");
  if (spec.budget.max_stages == 0) throw SpecError("$.budget.max_stages", "must be >= 1");

  fs::path out = get_string(doc, "output_dir", root, std::string("results/") + spec.name);
  spec.output_dir = out.is_relative() ? base_dir / out : out;

  spec.reference.cache_dir = spec.output_dir / "reference-cache";
  if (doc.contains("reference")) {
    const auto& r = doc.at("reference");
    require_object(r, "$.reference");
    reject_unknown(r, "$.reference", {"enabled", "cache_dir", "tol", "max_seconds"});
    spec.reference.enabled = get_bool(r, "enabled", "$.reference", true);
    if (r.contains("cache_dir")) {
      fs::path c = get_string(r, "cache_dir", "$.reference");
      spec.reference.cache_dir = c.is_relative() ? base_dir / c : c;
    }
    spec.reference.tol = get_number(r, "tol", "$.reference", 1e-12);
    spec.reference.max_seconds = get_number(r, "max_seconds", "$.reference", 600.0);
    if (!(spec.reference.tol > 0.0)) throw SpecError("$.reference.tol", "must be > 0");
  }
  return spec;
}

ExperimentSpec load_experiment(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open experiment spec " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_experiment(buf.str(), base);
}

const std::vector<std::string>& override_keys() {
  static const std::vector<std::string> keys = {
      "b_g",        "b_h",          "rank",         "rho",          "alpha",
      "m",          "warmup_stages", "update_period", "snapshot",    "eta_rule",
      "apg_tol",    "apg_t_max",    "apg_restart",  "strict_paper", "seed",
      "max_passes", "max_seconds",  "max_stages",   "tol",          "stall_rtol",
      "stall_stages", "saga_step"};
  return keys;
}

void apply_override(SolverConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "b_g") cfg.b_g = parse_count(key, value);
  else if (key == "b_h") cfg.b_h = parse_count(key, value);
  else if (key == "rank") cfg.nyssn_rank = parse_count(key, value);
  else if (key == "rho") cfg.rho = parse_double(key, value);
  else if (key == "alpha") cfg.alpha = parse_double(key, value);
  else if (key == "m") cfg.m = parse_count(key, value);
  else if (key == "warmup_stages") cfg.schedule.warmup_stages = parse_count(key, value);
  else if (key == "update_period") {
    cfg.schedule.period = parse_count(key, value);
    if (cfg.schedule.period == 0) throw InvalidArgument("override update_period: must be >= 1");
  } else if (key == "snapshot") {
    if (value == "average") cfg.snapshot = SnapshotOption::average;
    else if (value == "last") cfg.snapshot = SnapshotOption::last;
    else throw InvalidArgument("override snapshot: expected average or last");
  } else if (key == "eta_rule") {
    if (value == "hessian") cfg.eta_rule = EtaRule::hessian;
    else if (value == "expected_smoothness") cfg.eta_rule = EtaRule::expected_smoothness;
    else throw InvalidArgument("override eta_rule: expected hessian or expected_smoothness");
  } else if (key == "apg_tol") cfg.apg.tol = parse_double(key, value);
  else if (key == "apg_t_max") cfg.apg.t_max = parse_count(key, value);
  else if (key == "apg_restart") cfg.apg.restart = parse_flag(key, value);
  else if (key == "strict_paper") cfg.apg.strict_paper = parse_flag(key, value);
  else if (key == "seed") cfg.seed = parse_count(key, value);
  else if (key == "max_passes") cfg.budget.max_passes = parse_double(key, value);
  else if (key == "max_seconds") cfg.budget.max_seconds = parse_double(key, value);
  else if (key == "max_stages") cfg.budget.max_stages = parse_count(key, value);
  else if (key == "tol") cfg.tol = parse_double(key, value);
  else if (key == "stall_rtol") cfg.stall_rtol = parse_double(key, value);
  else if (key == "stall_stages") cfg.stall_stages = parse_count(key, value);
  else if (key == "saga_step") cfg.saga_step = parse_double(key, value);
  else throw InvalidArgument("unknown override key \"" + key + "\"");
}

std::uint64_t cell_seed(std::uint64_t experiment_seed, std::size_t index) {
  return mix_seed(experiment_seed, static_cast<std::uint64_t>(index));
}

Dataset materialize(const ProblemSpec& problem) {
  Dataset d;
  if (problem.synthetic) {
    d = make_synthetic(*problem.synthetic).dataset;
  } else {
    const auto& src = *problem.dataset;
    if (!fs::exists(src.path)) throw IoError("dataset not found: " + src.path.string());
    LibsvmOptions opts;
    opts.n_features = src.n_features;
    opts.positive_class = src.positive_class;
    if (problem.loss == LossKind::logistic) opts.label_mode = LabelMode::binary;
    opts.name = problem.name;
    d = load_libsvm(src.path, opts);
    if (src.normalize) d = normalize_rows(d);
    if (src.intercept) d = append_constant_column(d);
  }
  d.name = problem.name;
  return d;
}

std::uint64_t problem_hash(const GlmLoss& loss, const Regularizer& reg) {
  Fnv1a h;
  h.value<std::uint32_t>(static_cast<std::uint32_t>(loss.kind()));
  h.value<double>(loss.nu());
  h.value<std::uint32_t>(static_cast<std::uint32_t>(reg.kind()));
  h.value<double>(reg.lambda());
  h.value<double>(reg.shape());
  const auto& a = loss.data().features;
  h.value<std::uint64_t>(a.rows());
  h.value<std::uint64_t>(a.cols());
  h.array(a.row_offsets());
  h.array(a.col_indices());
  h.array(a.values());
  h.array(std::span<const double>(loss.data().labels));
  return h.digest();
}

std::string base64_encode(const std::vector<double>& values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(bytes.data() + 8 * i, &bits, 8);
  }
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                            static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back(kB64[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kB64[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<double> base64_decode_doubles(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidArgument("base64: length is not a multiple of 4");
  std::string bytes;
  bytes.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw InvalidArgument("base64: misplaced padding");
        v[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw InvalidArgument("base64: misplaced padding");
        v[k] = b64_value(c);
        if (v[k] < 0) throw InvalidArgument("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    bytes.push_back(static_cast<char>((w >> 16) & 0xff));
    if (pad < 2) bytes.push_back(static_cast<char>((w >> 8) & 0xff));
    if (pad < 1) bytes.push_back(static_cast<char>(w & 0xff));
  }
  if (bytes.size() % 8 != 0) throw InvalidArgument("base64: payload is not a float64 array");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + 8 * i, 8);
    out[i] = std::bit_cast<double>(to_little_endian(bits));
  }
  return out;
}

void write_reference(const fs::path& file, std::uint64_t hash, const ReferenceSolution& sol) {
  ordered_json j;
  j["format"] = kReferenceFormat;
  j["problem_hash"] = hex64(hash);
  j["p"] = sol.w.size();
  j["objective"] = sol.objective;
  j["grad_map_norm"] = sol.grad_map_norm;
  j["iterations"] = sol.iterations;
  j["polished"] = sol.polished;
  j["encoding"] = "base64-float64-le";
  j["w"] = base64_encode(sol.w);
  if (!file.parent_path().empty()) fs::create_directories(file.parent_path());
  const auto tmp = fs::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::optional<ReferenceSolution> read_reference(const fs::path& file, std::uint64_t hash,
                                                std::size_t p) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const auto j = json::parse(in);
    if (j.at("format").get<std::string>() != kReferenceFormat) return std::nullopt;
    if (j.at("problem_hash").get<std::string>() != hex64(hash)) return std::nullopt;
    if (j.at("p").get<std::size_t>() != p) return std::nullopt;
    ReferenceSolution sol;
    sol.w = base64_decode_doubles(j.at("w").get<std::string>());
    if (sol.w.size() != p || !all_finite(sol.w)) return std::nullopt;
    sol.objective = j.at("objective").get<double>();
    sol.grad_map_norm = j.at("grad_map_norm").get<double>();
    sol.iterations = j.at("iterations").get<std::size_t>();
    sol.polished = j.at("polished").get<bool>();
    return sol;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

ReferenceSolution cached_reference(const GlmLoss& loss, const Regularizer& reg,
                                   const ReferenceSpec& spec, bool* from_cache) {
  const auto hash = problem_hash(loss, reg);
  const auto file = spec.cache_dir / ("reference-" + hex64(hash) + ".json");
  if (auto hit = read_reference(file, hash, loss.p())) {
    // Recompute the objective so a stale header cannot skew the metric.
    hit->objective = objective(loss, reg, hit->w);
    if (from_cache) *from_cache = true;
    return *hit;
  }
  ReferenceOptions opts;
  opts.tol = spec.tol;
  opts.max_seconds = spec.max_seconds;
  auto sol = reference_solve(loss, reg, opts);
  write_reference(file, hash, sol);
  if (from_cache) *from_cache = false;
  return sol;
}

std::optional<double> first_crossing(const std::vector<double>& x,
                                     const std::vector<double>& rel, double threshold) {
  for (std::size_t i = 0; i < x.size() && i < rel.size(); ++i)
    if (rel[i] <= threshold) return x[i];
  return std::nullopt;
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  if (spec.solvers.empty()) throw InvalidArgument("experiment has no solvers");
  if (spec.problems.empty()) throw InvalidArgument("experiment has no problems");
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  // Validate every override before doing any work.
  for (const auto& s : spec.solvers) {
    SolverConfig probe;
    for (const auto& [k, v] : s.overrides) apply_override(probe, k, v);
    for (const auto& [k, v] : options.overrides) apply_override(probe, k, v);
  }

  struct ProblemState {
    std::shared_ptr<const Dataset> data;
    std::unique_ptr<GlmLoss> loss;
    std::optional<ReferenceSolution> reference;
    std::string reference_source = "none";
  };
  std::vector<ProblemState> problems(spec.problems.size());
  for (std::size_t i = 0; i < spec.problems.size(); ++i) {
    const auto& ps = spec.problems[i];
    problems[i].data = std::make_shared<const Dataset>(materialize(ps));
    problems[i].loss = std::make_unique<GlmLoss>(ps.loss, problems[i].data, ps.nu);
    log("problem " + ps.name + ": n=" + std::to_string(problems[i].data->n()) +
        " p=" + std::to_string(problems[i].data->p()));
  }
  fs::create_directories(spec.output_dir);
  for (std::size_t i = 0; i < spec.problems.size(); ++i) {
    const auto& ps = spec.problems[i];
    if (!spec.reference.enabled || !ps.regularizer.is_convex()) continue;
    bool hit = false;
    problems[i].reference = cached_reference(*problems[i].loss, ps.regularizer, spec.reference, &hit);
    problems[i].reference_source = hit ? "cache" : "reference-solver";
    log("problem " + ps.name + ": reference objective " +
        format_double(problems[i].reference->objective) + " (" + problems[i].reference_source + ")");
  }

  const std::size_t n_solvers = spec.solvers.size();
  const std::size_t n_cells = spec.problems.size() * n_solvers;
  ExperimentOutcome outcome;
  outcome.cells.resize(n_cells);

  auto run_cell = [&](std::size_t idx) {
    const std::size_t pi = idx / n_solvers;
    const auto& ss = spec.solvers[idx % n_solvers];
    auto& cell = outcome.cells[idx];
    cell.problem = spec.problems[pi].name;
    cell.solver = ss.name;
    cell.method = ss.method;
    cell.seed = cell_seed(spec.seed, idx);
    try {
      const auto cfg = build_config(spec, ss, options, cell.seed);
      cell.seed = cfg.seed;
      cell.result = dispatch(ss.method, *problems[pi].loss, spec.problems[pi].regularizer, cfg);
      cell.status = cell.result->termination == Termination::diverged ? "diverged" : "ok";
      cell.message = cell.result->message;
    } catch (const std::exception& e) {
      cell.status = "error";
      cell.message = e.what();
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, n_cells));
  if (threads == 1) {
    for (std::size_t i = 0; i < n_cells; ++i) {
      run_cell(i);
      const auto& c = outcome.cells[i];
      log("cell " + std::to_string(i + 1) + "/" + std::to_string(n_cells) + " " + c.problem +
          "/" + c.solver + ": " + c.status + (c.message.empty() ? "" : " (" + c.message + ")"));
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n_cells; i = next++) {
          run_cell(i);
          const auto& c = outcome.cells[i];
          std::lock_guard<std::mutex> lock(log_mutex);
          log("cell " + std::to_string(i + 1) + "/" + std::to_string(n_cells) + " " +
              c.problem + "/" + c.solver + ": " + c.status);
        }
      });
    for (auto& th : pool) th.join();
  }

  ordered_json summary;
  summary["schema"] = kSummarySchema;
  summary["experiment"] = spec.name;
  summary["seed"] = spec.seed;
  summary["timing_recorded"] = options.record_timing;
  summary["strict_paper"] = options.strict_paper;
  summary["problems"] = ordered_json::array();
  const bool multi = spec.problems.size() > 1;
  const double thresholds[] = {1e-3, 1e-6, 1e-9};
  const char* threshold_keys[] = {"1e-3", "1e-6", "1e-9"};

  for (std::size_t pi = 0; pi < spec.problems.size(); ++pi) {
    const auto& ps = spec.problems[pi];
    const auto& state = problems[pi];
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n_solvers; ++s) {
      const auto& c = outcome.cells[pi * n_solvers + s];
      if (!c.result || c.result->trace.empty()) continue;
      const double f = c.result->trace.back().objective;
      if (std::isfinite(f) && c.status == "ok") best = std::min(best, f);
    }
    if (state.reference) best = std::min(best, state.reference->objective);

    ordered_json pj;
    pj["name"] = ps.name;
    pj["n"] = state.data->n();
    pj["p"] = state.data->p();
    pj["loss"] = describe_loss(ps);
    pj["nu"] = ps.nu;
    pj["regularizer"] = ps.regularizer.describe();
    pj["problem_hash"] = hex64(problem_hash(*state.loss, ps.regularizer));
    ordered_json ref;
    ref["source"] = state.reference_source;
    ref["objective"] = state.reference ? json(state.reference->objective) : json(nullptr);
    ref["grad_map_norm"] = state.reference ? json(state.reference->grad_map_norm) : json(nullptr);
    pj["reference"] = ref;
    pj["best_objective"] = std::isfinite(best) ? json(best) : json(nullptr);
    pj["solvers"] = ordered_json::array();

    for (std::size_t s = 0; s < n_solvers; ++s) {
      const std::size_t idx = pi * n_solvers + s;
      auto& c = outcome.cells[idx];
      ordered_json sj;
      sj["name"] = c.solver;
      sj["method"] = to_string(c.method);
      sj["cell"] = idx;
      sj["seed"] = c.seed;
      sj["status"] = c.status;
      sj["termination"] = c.result ? to_string(c.result->termination) : "error";
      sj["message"] = c.message;
      std::vector<double> passes, seconds, rel;
      if (c.result && !c.result->trace.empty() && std::isfinite(best)) {
        c.trace_file = spec.output_dir /
                       (sanitize(multi ? ps.name + "__" + c.solver : c.solver) + ".csv");
        write_trace_csv(c.trace_file, c.result->trace, best, options.record_timing);
        for (const auto& r : c.result->trace) {
          if (!std::isfinite(r.objective)) continue;
          passes.push_back(r.effective_passes);
          seconds.push_back(options.record_timing ? r.wall_seconds : 0.0);
          rel.push_back(suboptimality_from_values(r.objective, best).relative);
        }
        sj["trace_file"] = c.trace_file.filename().string();
      } else {
        sj["trace_file"] = nullptr;
      }
      const bool have = !rel.empty();
      sj["stages"] = c.result ? c.result->trace.size() - 1 : 0;
      sj["effective_passes"] = have ? json(passes.back()) : json(nullptr);
      sj["wall_seconds"] = have ? json(seconds.back()) : json(nullptr);
      sj["final_objective"] = have ? json(c.result->trace.back().objective) : json(nullptr);
      if (have && !std::isfinite(c.result->trace.back().objective))
        sj["final_objective"] = nullptr;
      sj["final_relative_error"] = have && c.status == "ok" ? json(rel.back()) : json(nullptr);
      ordered_json pt, st;
      for (int t = 0; t < 3; ++t) {
        const bool usable = have && c.status == "ok";
        pt[threshold_keys[t]] =
            usable ? optional_number(first_crossing(passes, rel, thresholds[t])) : json(nullptr);
        st[threshold_keys[t]] =
            usable ? optional_number(first_crossing(seconds, rel, thresholds[t])) : json(nullptr);
      }
      sj["passes_to_threshold"] = pt;
      sj["seconds_to_threshold"] = st;
      pj["solvers"].push_back(sj);
    }
    summary["problems"].push_back(pj);
  }

  outcome.summary_file = spec.output_dir / "summary.json";
  std::ofstream out(outcome.summary_file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + outcome.summary_file.string());
  out << summary.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + outcome.summary_file.string());
  return outcome;
}

CompareOutcome compare_experiment(const fs::path& dir, double target) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  struct Entry {
    std::string label;
    std::string status;
    fs::path file;
  };
  std::vector<Entry> entries;
  const auto summary_file = dir / "summary.json";
  if (fs::exists(summary_file)) {
    std::ifstream in(summary_file);
    json s;
    try {
      s = json::parse(in);
    } catch (const json::parse_error& e) {
      throw IoError(summary_file.string() + ": " + e.what());
    }
    const auto& problems = s.at("problems");
    const bool multi = problems.size() > 1;
    for (const auto& p : problems)
      for (const auto& sv : p.at("solvers")) {
        Entry e;
        e.label = multi ? p.at("name").get<std::string>() + "/" + sv.at("name").get<std::string>()
                        : sv.at("name").get<std::string>();
        e.status = sv.at("status").get<std::string>();
        if (sv.at("trace_file").is_string()) e.file = dir / sv.at("trace_file").get<std::string>();
        entries.push_back(e);
      }
  } else {
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(dir))
      if (de.path().extension() == ".csv" && de.path().filename() != "compare.csv")
        files.push_back(de.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) entries.push_back({f.stem().string(), "ok", f});
  }
  std::size_t traces = 0;
  for (const auto& e : entries) traces += e.file.empty() ? 0 : 1;
  if (traces == 0) throw IoError("no traces found in " + dir.string());

  CompareOutcome out;
  out.long_csv = dir / "compare.csv";
  std::ofstream csv(out.long_csv, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out.long_csv.string());
  csv << "solver,x_kind,x,relative_error\n";
  std::vector<CompareRow> rows;
  for (const auto& e : entries) {
    CompareRow row;
    row.solver = e.label;
    row.status = e.status;
    if (!e.file.empty()) {
      const auto trace = read_trace_csv(e.file);
      std::vector<double> passes, seconds, rel;
      for (const auto& r : trace) {
        passes.push_back(r.passes);
        seconds.push_back(r.seconds);
        rel.push_back(r.relative_error);
      }
      for (const auto& r : trace)
        csv << e.label << ",passes," << format_double(r.passes) << ','
            << format_double(r.relative_error) << '\n';
      for (const auto& r : trace)
        csv << e.label << ",seconds," << format_double(r.seconds) << ','
            << format_double(r.relative_error) << '\n';
      if (e.status == "ok" && !rel.empty()) {
        row.passes_to_target = first_crossing(passes, rel, target);
        row.seconds_to_target = first_crossing(seconds, rel, target);
        row.final_relative_error = rel.back();
      }
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
    if (a.passes_to_target.has_value() != b.passes_to_target.has_value())
      return a.passes_to_target.has_value();
    if (a.passes_to_target && b.passes_to_target) return *a.passes_to_target < *b.passes_to_target;
    return false;
  });
  out.ranking = rows;

  const std::string dash = "-";
  auto cell = [&](std::optional<double> v, const char* fmt) {
    if (!v) return dash;
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, *v);
    return std::string(buf);
  };
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.solver.size());
  char target_label[32];
  std::snprintf(target_label, sizeof target_label, "%g", target);
  std::ostringstream t;
  char line[512];
  std::snprintf(line, sizeof line, "%-4s %-*s %-9s %16s %16s %14s\n", "rank",
                static_cast<int>(width), "solver", "status",
                ("passes_to_" + std::string(target_label)).c_str(),
                ("seconds_to_" + std::string(target_label)).c_str(), "final_rel_err");
  t << line;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::snprintf(line, sizeof line, "%-4zu %-*s %-9s %16s %16s %14s\n", i + 1,
                  static_cast<int>(width), r.solver.c_str(), r.status.c_str(),
                  cell(r.passes_to_target, "%.2f").c_str(),
                  cell(r.seconds_to_target, "%.3f").c_str(),
                  cell(r.final_relative_error, "%.3e").c_str());
    t << line;
  }
  out.table = t.str();
  return out;
}

}  // namespace sapphire::bench
