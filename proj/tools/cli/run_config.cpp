#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqoed/models/linear_gaussian.hpp"

namespace seqoed::cli {

using Json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ConfigError("config field '" + field + "': " + what);
}

/// Reads members of one JSON object; whatever is left unread at finish() is
/// reported as an unknown key.
class Reader {
 public:
  Reader(const Json& object, std::string path) : obj_(object), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return obj_.contains(key); }

  const Json& require(const std::string& key) {
    if (!obj_.contains(key)) fail(field(key), "missing required field");
    seen_.insert(key);
    return obj_.at(key);
  }
  const Json* optional(const std::string& key) {
    if (!obj_.contains(key)) return nullptr;
    seen_.insert(key);
    return &obj_.at(key);
  }

  template <class T>
  T get(const std::string& key, const Json& value) const {
    try {
      return value.get<T>();
    } catch (const Json::exception&) {
      fail(field(key), "wrong type");
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const Json* v = optional(key)) out = get<T>(key, *v);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown key");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

Json parse_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(what + ": JSON syntax error at line " + std::to_string(line) + ", column " +
                      std::to_string(col));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_positive(const std::string& field, double v) {
  if (!(v > 0.0)) fail(field, "must be positive");
}

void read_train(const Json& j, design::TrainConfig& t) {
  Reader r(j, "train");
  r.read("iterations", t.iterations);
  r.read("episodes", t.episodes);
  r.read("alpha", t.alpha);
  if (const Json* v = r.optional("optimizer")) {
    const auto name = r.get<std::string>("optimizer", *v);
    if (name == "sgd") {
      t.optimizer = design::Optimizer::sgd;
    } else if (name == "adam") {
      t.optimizer = design::Optimizer::adam;
    } else {
      fail("train.optimizer", "expected sgd or adam");
    }
  }
  r.read("sigma_explore", t.sigma_explore);
  r.read("explore_decay", t.explore_decay);
  r.read("alpha_decay", t.alpha_decay);
  r.read("max_grad_norm", t.max_grad_norm);
  r.read("q_fit_steps", t.q_fit.steps);
  r.read("q_fit_learning_rate", t.q_fit.learning_rate);
  r.read("policy_hidden", t.policy_hidden);
  r.read("q_hidden", t.q_hidden);
  r.read("divergence_guard", t.divergence_guard);
  r.finish();
}

void read_surrogate(const Json& j, models::SurrogateTrainOptions& s) {
  Reader r(j, "surrogate");
  r.read("n_theta_samples", s.n_theta_samples);
  r.read("positions_per_theta", s.positions_per_theta);
  r.read("hidden", s.hidden);
  r.read("test_fraction", s.test_fraction);
  r.read("epochs", s.epochs);
  r.read("batch_size", s.batch_size);
  r.read("learning_rate", s.learning_rate);
  r.read("final_learning_rate", s.final_learning_rate);
  r.finish();
  if (s.n_theta_samples < 1) fail("surrogate.n_theta_samples", "must be >= 1");
  if (s.positions_per_theta < 1) fail("surrogate.positions_per_theta", "must be >= 1");
  if (!(s.test_fraction >= 0.0 && s.test_fraction < 1.0)) fail("surrogate.test_fraction", "must lie in [0, 1)");
  if (s.epochs < 0) fail("surrogate.epochs", "must be >= 0");
  if (s.batch_size < 1) fail("surrogate.batch_size", "must be >= 1");
  require_positive("surrogate.learning_rate", s.learning_rate);
  require_positive("surrogate.final_learning_rate", s.final_learning_rate);
}

PriorDim read_prior(Reader& parent, const std::string& key, const Json& j) {
  Reader r(j, parent.field(key));
  const auto kind = r.get<std::string>("kind", r.require("kind"));
  PriorDim p;
  if (kind == "uniform") {
    const double lo = r.get<double>("lo", r.require("lo"));
    const double hi = r.get<double>("hi", r.require("hi"));
    p = PriorDim::uniform(lo, hi);
  } else if (kind == "gaussian") {
    const double mean = r.get<double>("mean", r.require("mean"));
    const double sd = r.get<double>("stddev", r.require("stddev"));
    p = PriorDim::gaussian(mean, sd);
  } else {
    fail(r.field("kind"), "expected uniform or gaussian");
  }
  r.finish();
  return p;
}

Vector read_vec2(Reader& r, const std::string& key, const Json& j) {
  const auto v = r.get<std::vector<double>>(key, j);
  if (v.size() != 2) fail(r.field(key), "expected two numbers");
  Vector out(2);
  out << v[0], v[1];
  return out;
}

}  // namespace

std::string to_string(models::Engine engine) { return engine == models::Engine::fv ? "fv" : "surrogate"; }

models::Engine parse_engine(const std::string& name) {
  if (name == "fv") return models::Engine::fv;
  if (name == "surrogate") return models::Engine::surrogate;
  throw ConfigError("unknown engine '" + name + "' (expected fv or surrogate)");
}

design::TrainConfig default_train_config(const std::string& problem) {
  design::TrainConfig t;
  if (problem != "linear_gaussian") {
    t.episodes = 500;
    t.alpha = 0.01;
    t.optimizer = design::Optimizer::adam;
    t.sigma_explore = 0.05;
    t.explore_decay = 1.0;
    t.alpha_decay = 1.0;
    t.max_grad_norm = 0.0;
  }
  return t;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  const Json doc = parse_text(text, "config");
  Reader r(doc, "");
  const Json& version = r.require("schema_version");
  if (!version.is_number_integer() || version.get<int>() != kSchemaVersion) {
    fail("schema_version", "expected " + std::to_string(kSchemaVersion));
  }
  RunConfig c;
  c.problem = r.get<std::string>("problem", r.require("problem"));
  static const std::set<std::string> known{"linear_gaussian", "source_case1", "source_case2", "source_case3",
                                           "custom"};
  if (!known.count(c.problem)) {
    fail("problem", "expected linear_gaussian, source_case1, source_case2, source_case3 or custom");
  }
  if (const Json* v = r.optional("custom_file")) c.custom_file = resolve(base_dir, r.get<std::string>("custom_file", *v));
  if (c.problem == "custom") {
    if (c.custom_file.empty()) fail("custom_file", "missing required field for problem 'custom'");
    if (!std::filesystem::exists(c.custom_file)) fail("custom_file", "file not found: " + c.custom_file.string());
  }

  const Json& seed = r.require("seed");
  if (!seed.is_number_integer() || seed.get<long long>() < 0) fail("seed", "expected a non-negative integer");
  c.seed = seed.get<std::uint64_t>();

  if (const Json* v = r.optional("mode")) {
    try {
      c.mode = design::parse_mode(r.get<std::string>("mode", *v));
    } catch (const ConfigError& e) {
      fail("mode", e.what());
    }
  }
  c.train = default_train_config(c.problem);
  if (const Json* v = r.optional("train")) read_train(*v, c.train);
  c.train.mode = c.mode;
  c.train.seed = c.seed;
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    fail("train", e.what());
  }

  if (const Json* v = r.optional("grid")) {
    Reader g(*v, "grid");
    if (const Json* n = g.optional("train_nodes")) c.train_grid_nodes = g.get<int>("train_nodes", *n);
    if (const Json* n = g.optional("eval_nodes")) c.eval_grid_nodes = g.get<int>("eval_nodes", *n);
    g.finish();
    if (c.train_grid_nodes && *c.train_grid_nodes < 2) fail("grid.train_nodes", "must be >= 2");
    if (c.eval_grid_nodes && *c.eval_grid_nodes < 2) fail("grid.eval_nodes", "must be >= 2");
  }
  if (const Json* v = r.optional("engine")) {
    try {
      c.engine = parse_engine(r.get<std::string>("engine", *v));
    } catch (const ConfigError& e) {
      fail("engine", e.what());
    }
  }
  if (const Json* v = r.optional("surrogate_path")) {
    c.surrogate_path = resolve(base_dir, r.get<std::string>("surrogate_path", *v));
  }
  if (const Json* v = r.optional("solver_profile")) {
    const auto p = r.get<std::string>("solver_profile", *v);
    if (p == "desk") {
      c.solver_profile = models::SolverProfile::desk;
    } else if (p == "fine") {
      c.solver_profile = models::SolverProfile::fine;
    } else {
      fail("solver_profile", "expected desk or fine");
    }
  }
  r.read("eval_episodes", c.eval_episodes);
  if (c.eval_episodes < 0) fail("eval_episodes", "must be >= 0");
  if (const Json* v = r.optional("output_dir")) c.output_dir = resolve(base_dir, r.get<std::string>("output_dir", *v));
  r.read("threads", c.threads);
  if (c.threads < 0) fail("threads", "must be >= 0");
  if (const Json* v = r.optional("surrogate")) read_surrogate(*v, c.surrogate);
  r.finish();

  if (!c.is_source_problem() && c.engine == models::Engine::surrogate) {
    fail("engine", "the surrogate engine applies to source-inversion problems only");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

models::CaseConfig load_case_file(const std::filesystem::path& path) {
  const Json doc = parse_text(read_file(path), path.string());
  Reader r(doc, "custom");
  models::CaseConfig c;
  c.id = 0;
  r.read("name", c.name);
  r.read("horizon", c.horizon);
  if (const Json* v = r.optional("prior_x")) c.prior_x = read_prior(r, "prior_x", *v);
  if (const Json* v = r.optional("prior_y")) c.prior_y = read_prior(r, "prior_y", *v);
  if (const Json* v = r.optional("prior_width")) c.prior_width = read_prior(r, "prior_width", *v);
  if (const Json* v = r.optional("prior_strength")) c.prior_strength = read_prior(r, "prior_strength", *v);
  r.read("width", c.width);
  r.read("strength", c.strength);
  r.read("source_on_time", c.source_on_time);
  if (const Json* v = r.optional("initial_position")) c.initial_position = read_vec2(r, "initial_position", *v);
  if (const Json* v = r.optional("constraint")) {
    Reader k(*v, r.field("constraint"));
    const auto kind = k.get<std::string>("kind", k.require("kind"));
    if (kind == "box") {
      c.constraint.kind = DesignConstraint::Kind::box;
    } else if (kind == "state_box") {
      c.constraint.kind = DesignConstraint::Kind::state_box;
    } else {
      fail(k.field("kind"), "expected box or state_box");
    }
    c.constraint.region.lo = read_vec2(k, "lo", k.require("lo"));
    c.constraint.region.hi = read_vec2(k, "hi", k.require("hi"));
    k.finish();
  }
  if (const Json* v = r.optional("domain")) {
    const Vector d = read_vec2(r, "domain", *v);
    c.z_lo = d[0];
    c.z_hi = d[1];
  }
  c.times = r.get<std::vector<double>>("times", r.require("times"));
  if (const Json* v = r.optional("velocity_rate")) {
    const Vector u = read_vec2(r, "velocity_rate", *v);
    c.velocity = RampVelocity{u[0], u[1]};
  }
  r.read("noise_sigma", c.noise_sigma);
  c.cost.wind = c.velocity;
  if (const Json* v = r.optional("cost")) {
    Reader k(*v, r.field("cost"));
    const auto kind = k.get<std::string>("kind", k.require("kind"));
    if (kind == "none") {
      c.cost.kind = CostSpec::Kind::none;
    } else if (kind == "squared_norm") {
      c.cost.kind = CostSpec::Kind::squared_norm;
    } else if (kind == "wind_adjusted") {
      c.cost.kind = CostSpec::Kind::wind_adjusted;
    } else {
      fail(k.field("kind"), "expected none, squared_norm or wind_adjusted");
    }
    k.read("coefficient", c.cost.coefficient);
    k.finish();
  }
  r.read("train_grid_nodes", c.train_grid_nodes);
  r.read("eval_grid_nodes", c.eval_grid_nodes);
  r.finish();
  c.validate();
  return c;
}

models::CaseConfig case_for(const RunConfig& config) {
  models::CaseConfig c;
  if (config.problem == "custom") {
    c = load_case_file(config.custom_file);
  } else if (config.problem.rfind("source_case", 0) == 0) {
    c = models::case_config(config.problem.back() - '0');
  } else {
    throw ConfigError("problem '" + config.problem + "' is not a source-inversion case");
  }
  if (config.train_grid_nodes) c.train_grid_nodes = *config.train_grid_nodes;
  if (config.eval_grid_nodes) c.eval_grid_nodes = *config.eval_grid_nodes;
  return c;
}

ProblemSpec build_problem(const RunConfig& config) {
  if (!config.is_source_problem()) {
    ProblemSpec p = models::linear_gaussian_problem();
    if (config.train_grid_nodes) p.train_grid_nodes = *config.train_grid_nodes;
    if (config.eval_grid_nodes) p.eval_grid_nodes = *config.eval_grid_nodes;
    return p;
  }
  std::shared_ptr<const models::SurrogateModel> surrogate;
  if (config.engine == models::Engine::surrogate) {
    if (config.surrogate_path.empty()) fail("surrogate_path", "required with engine 'surrogate'");
    if (!std::filesystem::exists(config.surrogate_path)) {
      fail("surrogate_path", "file not found: " + config.surrogate_path.string());
    }
    surrogate = std::make_shared<models::SurrogateModel>(models::SurrogateModel::load(config.surrogate_path));
  }
  return models::source_inversion_problem(case_for(config), config.solver_profile, config.engine, surrogate,
                                          config.threads);
}

}  // namespace seqoed::cli
