#include "dpmix/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dpmix/privacy.hpp"

namespace dpmix {

namespace {

using nlohmann::json;

constexpr std::string_view kManifestFormat = "dpmix-manifest-1";

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ConfigError(path + ": " + why);
}

// Reads one JSON object, remembering which keys were consumed so that any
// leftover key can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(label(), "expected an object");
  }

  std::string key_path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    return as_number(*v, key_path(key));
  }

  std::optional<double> opt_number(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    return as_number(*v, key_path(key));
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    return as_count(*v, key_path(key));
  }

  std::optional<std::size_t> opt_count(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    return as_count(*v, key_path(key));
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(key_path(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(key_path(key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    if (v->is_array()) {
      if (v->empty()) fail(key_path(key), "list must not be empty");
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_number((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
      }
    } else {
      out.push_back(as_number(*v, key_path(key)));
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    std::vector<std::size_t> out;
    if (v->is_array()) {
      if (v->empty()) fail(key_path(key), "list must not be empty");
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_count((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
      }
    } else {
      out.push_back(as_count(*v, key_path(key)));
    }
    return out;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail(key_path(it.key()), "unknown key");
    }
  }

  std::string label() const { return path_.empty() ? "<root>" : path_; }

 private:
  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  static std::size_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
      fail(path, "expected a nonnegative integer");
    }
    return v.get<std::size_t>();
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

Method method_from(const std::string& name, const std::string& path) {
  try {
    return parse_method(name);
  } catch (const std::exception&) {
    fail(path, "unknown method '" + name + "' (expected dpmixsgd, dm_hsgd, sgda or dp_sgda)");
  }
}

void parse_dataset(const json& j, DatasetSpec& ds) {
  ObjectReader r(j, "dataset");
  const std::string kind = r.string("kind", "synthetic");
  if (kind == "libsvm") {
    ds.kind = DatasetSpec::Kind::libsvm;
    const std::string path = r.string("path", "");
    if (path.empty()) fail("dataset.path", "required for libsvm datasets");
    ds.path = path;
    if (!std::filesystem::exists(ds.path)) fail("dataset.path", "file not found: " + path);
    ds.path = std::filesystem::absolute(ds.path).lexically_normal();
    if (const json* t = r.find("test_path"); t && !t->is_null()) {
      if (!t->is_string()) fail("dataset.test_path", "expected a string");
      std::filesystem::path tp = t->get<std::string>();
      if (!std::filesystem::exists(tp)) fail("dataset.test_path", "file not found: " + tp.string());
      ds.test_path = std::filesystem::absolute(tp).lexically_normal();
    }
    ds.dim = r.opt_count("dim");
    if (ds.dim && *ds.dim == 0) fail("dataset.dim", "dim must be positive");
  } else if (kind == "synthetic") {
    ds.kind = DatasetSpec::Kind::synthetic;
    ds.n = r.count("n", ds.n);
    ds.d = r.count("d", ds.d);
    ds.margin = r.number("margin", ds.margin);
    ds.flip_rate = r.number("flip_rate", ds.flip_rate);
    ds.seed = r.count("seed", ds.seed);
    if (ds.n < 2) fail("dataset.n", "n must be at least 2");
    if (ds.d == 0) fail("dataset.d", "d must be positive");
    if (!(ds.margin >= 0.0)) fail("dataset.margin", "margin must be nonnegative");
    if (!(ds.flip_rate >= 0.0 && ds.flip_rate <= 0.5)) {
      fail("dataset.flip_rate", "flip_rate must lie in [0, 0.5]");
    }
  } else {
    fail("dataset.kind", "expected 'libsvm' or 'synthetic'");
  }
  ds.test_fraction = r.number("test_fraction", ds.test_fraction);
  if (!(ds.test_fraction > 0.0 && ds.test_fraction < 1.0)) {
    fail("dataset.test_fraction", "test_fraction must lie in (0, 1)");
  }
  ds.split_seed = r.count("split_seed", ds.split_seed);
  ds.unit_scale = r.boolean("unit_scale", ds.unit_scale);
  const std::string mode = r.string("shard", "iid");
  if (mode == "iid") {
    ds.shard_mode = ShardMode::iid;
  } else if (mode == "label_sorted") {
    ds.shard_mode = ShardMode::label_sorted;
  } else {
    fail("dataset.shard", "expected 'iid' or 'label_sorted'");
  }
  r.finish();
}

void parse_hyper(const json& j, HyperSpec& h) {
  ObjectReader r(j, "hyperparameters");
  const std::string preset = r.string("preset", "manual");
  if (preset == "manual") {
    h.preset = HyperSpec::Preset::manual;
    h.eta_x = r.number("eta_x", h.eta_x);
    h.eta_y = r.number("eta_y", h.eta_y);
    h.beta_x = r.number("beta_x", h.beta_x);
    h.beta_y = r.number("beta_y", h.beta_y);
    if (!(h.eta_x >= 0.0)) fail("hyperparameters.eta_x", "eta_x must be nonnegative");
    if (!(h.eta_y >= 0.0)) fail("hyperparameters.eta_y", "eta_y must be nonnegative");
    if (!(h.beta_x > 0.0 && h.beta_x <= 1.0)) {
      fail("hyperparameters.beta_x", "beta_x must lie in (0, 1]");
    }
    if (!(h.beta_y > 0.0 && h.beta_y <= 1.0)) {
      fail("hyperparameters.beta_y", "beta_y must lie in (0, 1]");
    }
  } else if (preset == "theorem1") {
    h.preset = HyperSpec::Preset::theorem1;
    h.epsilon = r.number("epsilon", h.epsilon);
    if (!(h.epsilon > 0.0)) fail("hyperparameters.epsilon", "epsilon must be positive");
    // Present in resolved documents; recomputed from epsilon.
    r.find("beta_x_by_m");
  } else {
    fail("hyperparameters.preset", "expected 'manual' or 'theorem1'");
  }
  h.b0 = r.opt_count("b0");
  if (h.b0 && *h.b0 == 0) fail("hyperparameters.b0", "b0 must be positive");
  h.batch = r.count("batch", h.batch);
  if (h.batch == 0) fail("hyperparameters.batch", "batch must be positive");
  h.clip = r.opt_number("clip");
  if (h.clip && !(*h.clip > 0.0)) fail("hyperparameters.clip", "clip must be positive");
  r.finish();
}

void parse_privacy(const json& j, PrivacySpec& p) {
  ObjectReader r(j, "privacy");
  p.theta = r.numbers("theta", p.theta);
  for (double t : p.theta) {
    if (!(t > 0.0) || !std::isfinite(t)) fail("privacy.theta", "theta must be positive");
  }
  p.gamma = r.numbers("gamma", p.gamma);
  for (double g : p.gamma) {
    if (!(g > 0.0 && g < 1.0)) fail("privacy.gamma", "gamma must lie in (0, 1)");
  }
  p.c = r.number("c", p.c);
  if (!(p.c > 0.0)) fail("privacy.c", "c must be positive");
  p.L_g = r.opt_number("L_g");
  if (p.L_g && !(*p.L_g > 0.0)) fail("privacy.L_g", "L_g must be positive");
  p.sigma = r.opt_number("sigma");
  if (p.sigma && !(*p.sigma >= 0.0)) fail("privacy.sigma", "sigma must be nonnegative");
  r.finish();
}

void parse_topology(const json& j, ExperimentConfig& cfg) {
  ObjectReader r(j, "topology");
  cfg.m = r.counts("m", cfg.m);
  for (std::size_t m : cfg.m) {
    if (m == 0) fail("topology.m", "m must be positive");
  }
  cfg.p = r.numbers("p", cfg.p);
  for (double p : cfg.p) {
    if (!(p >= 0.0 && p <= 1.0)) fail("topology.p", "p must lie in [0, 1]");
  }
  cfg.topology_seed = r.count("seed", cfg.topology_seed);
  r.finish();
}

void parse_objective(const json& j, RobustLogRegParams& o) {
  ObjectReader r(j, "objective");
  o.lambda1 = r.opt_number("lambda1");
  if (o.lambda1 && !(*o.lambda1 > 0.0)) fail("objective.lambda1", "lambda1 must be positive");
  o.lambda2 = r.number("lambda2", o.lambda2);
  if (!(o.lambda2 >= 0.0)) fail("objective.lambda2", "lambda2 must be nonnegative");
  o.alpha = r.number("alpha", o.alpha);
  if (!(o.alpha > 0.0)) fail("objective.alpha", "alpha must be positive");
  r.finish();
}

void parse_stationarity(const json& j, ExperimentConfig& cfg) {
  ObjectReader r(j, "stationarity");
  cfg.compute_stationarity = r.boolean("enabled", cfg.compute_stationarity);
  cfg.stationarity.inner_steps = r.count("inner_steps", cfg.stationarity.inner_steps);
  cfg.stationarity.inner_eta = r.opt_number("inner_eta");
  cfg.stationarity.tol = r.number("tol", cfg.stationarity.tol);
  if (cfg.stationarity.inner_steps < 1) {
    fail("stationarity.inner_steps", "inner_steps must be at least 1");
  }
  if (cfg.stationarity.inner_eta && !(*cfg.stationarity.inner_eta > 0.0)) {
    fail("stationarity.inner_eta", "inner_eta must be positive");
  }
  if (!(cfg.stationarity.tol >= 0.0)) fail("stationarity.tol", "tol must be nonnegative");
  r.finish();
}

ExperimentConfig parse_config(const json& root) {
  ExperimentConfig cfg;
  ObjectReader r(root, "");
  cfg.name = r.string("name", cfg.name);

  if (const json* d = r.find("dataset")) parse_dataset(*d, cfg.dataset);

  const bool has_method = r.has("method");
  const bool has_methods = r.has("methods");
  if (has_method && has_methods) fail("methods", "give either 'method' or 'methods', not both");
  if (has_method) {
    const json& v = root.at("method");
    if (!v.is_string()) fail("method", "expected a string");
    cfg.methods = {method_from(v.get<std::string>(), "method")};
  } else if (has_methods) {
    const json& v = root.at("methods");
    cfg.methods.clear();
    if (v.is_string()) {
      cfg.methods.push_back(method_from(v.get<std::string>(), "methods"));
    } else if (v.is_array() && !v.empty()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string path = "methods[" + std::to_string(i) + "]";
        if (!v[i].is_string()) fail(path, "expected a string");
        cfg.methods.push_back(method_from(v[i].get<std::string>(), path));
      }
    } else {
      fail("methods", "expected a method name or a non-empty list");
    }
  }

  if (const json* t = r.find("topology")) parse_topology(*t, cfg);
  if (const json* h = r.find("hyperparameters")) parse_hyper(*h, cfg.hyper);
  if (const json* p = r.find("privacy")) parse_privacy(*p, cfg.privacy);
  if (const json* o = r.find("objective")) parse_objective(*o, cfg.objective);
  if (const json* s = r.find("stationarity")) parse_stationarity(*s, cfg);

  cfg.epochs = r.opt_count("epochs");
  cfg.iterations = r.opt_count("iterations");
  if (cfg.epochs && cfg.iterations) fail("epochs", "give either 'epochs' or 'iterations', not both");
  if (cfg.epochs && *cfg.epochs == 0) fail("epochs", "epochs must be positive");
  if (cfg.iterations && *cfg.iterations == 0) fail("iterations", "iterations must be positive");
  cfg.log_every_epochs = r.count("log_every_epochs", cfg.log_every_epochs);

  if (const json* s = r.find("seeds")) {
    std::vector<std::uint64_t> seeds;
    auto one = [&](const json& v, const std::string& path) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        fail(path, "expected a nonnegative integer");
      }
      seeds.push_back(v.get<std::uint64_t>());
    };
    if (s->is_array()) {
      if (s->empty()) fail("seeds", "list must not be empty");
      for (std::size_t i = 0; i < s->size(); ++i) {
        one((*s)[i], "seeds[" + std::to_string(i) + "]");
      }
    } else {
      one(*s, "seeds");
    }
    cfg.seeds = std::move(seeds);
  }

  cfg.output = r.string("output", cfg.output.string());
  if (cfg.output.empty()) fail("output", "output must not be empty");
  cfg.jobs = r.count("jobs", cfg.jobs);
  cfg.threads = r.count("threads", cfg.threads);
  if (cfg.jobs == 0) fail("jobs", "jobs must be positive");
  if (cfg.threads == 0) fail("threads", "threads must be positive");
  cfg.record_wall_time = r.boolean("record_wall_time", cfg.record_wall_time);
  r.finish();
  return cfg;
}

template <class T>
json scalar_or_list(const std::vector<T>& v) {
  if (v.size() == 1) return json(v.front());
  return json(v);
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;

  json ds;
  const DatasetSpec& d = cfg.dataset;
  if (d.kind == DatasetSpec::Kind::libsvm) {
    ds["kind"] = "libsvm";
    ds["path"] = d.path.string();
    ds["test_path"] = d.test_path ? json(d.test_path->string()) : json(nullptr);
    ds["dim"] = d.dim ? json(*d.dim) : json(nullptr);
  } else {
    ds["kind"] = "synthetic";
    ds["n"] = d.n;
    ds["d"] = d.d;
    ds["margin"] = d.margin;
    ds["flip_rate"] = d.flip_rate;
    ds["seed"] = d.seed;
  }
  ds["test_fraction"] = d.test_fraction;
  ds["split_seed"] = d.split_seed;
  ds["unit_scale"] = d.unit_scale;
  ds["shard"] = d.shard_mode == ShardMode::iid ? "iid" : "label_sorted";
  j["dataset"] = ds;

  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(std::string(method_name(m)));
  j["methods"] = methods;

  j["topology"] = {{"m", scalar_or_list(cfg.m)},
                   {"p", scalar_or_list(cfg.p)},
                   {"seed", cfg.topology_seed}};

  json h;
  if (cfg.hyper.preset == HyperSpec::Preset::manual) {
    h["preset"] = "manual";
    h["eta_x"] = cfg.hyper.eta_x;
    h["eta_y"] = cfg.hyper.eta_y;
    h["beta_x"] = cfg.hyper.beta_x;
    h["beta_y"] = cfg.hyper.beta_y;
  } else {
    h["preset"] = "theorem1";
    h["epsilon"] = cfg.hyper.epsilon;
    json by_m = json::object();
    for (std::size_t m : cfg.m) by_m[std::to_string(m)] = cfg.theorem1_beta_x(m);
    h["beta_x_by_m"] = by_m;
  }
  h["b0"] = cfg.hyper.b0 ? json(*cfg.hyper.b0) : json(nullptr);
  h["batch"] = cfg.hyper.batch;
  h["clip"] = cfg.hyper.clip ? json(*cfg.hyper.clip) : json(nullptr);
  j["hyperparameters"] = h;

  j["privacy"] = {{"theta", scalar_or_list(cfg.privacy.theta)},
                  {"gamma", scalar_or_list(cfg.privacy.gamma)},
                  {"c", cfg.privacy.c},
                  {"L_g", cfg.privacy.L_g ? json(*cfg.privacy.L_g) : json(nullptr)},
                  {"sigma", cfg.privacy.sigma ? json(*cfg.privacy.sigma) : json(nullptr)}};

  j["objective"] = {
      {"lambda1", cfg.objective.lambda1 ? json(*cfg.objective.lambda1) : json(nullptr)},
      {"lambda2", cfg.objective.lambda2},
      {"alpha", cfg.objective.alpha}};

  j["stationarity"] = {
      {"enabled", cfg.compute_stationarity},
      {"inner_steps", cfg.stationarity.inner_steps},
      {"inner_eta", cfg.stationarity.inner_eta ? json(*cfg.stationarity.inner_eta) : json(nullptr)},
      {"tol", cfg.stationarity.tol}};

  if (cfg.epochs) j["epochs"] = *cfg.epochs;
  if (cfg.iterations) j["iterations"] = *cfg.iterations;
  j["log_every_epochs"] = cfg.log_every_epochs;
  j["seeds"] = cfg.seeds;
  j["output"] = cfg.output.string();
  j["jobs"] = cfg.jobs;
  j["threads"] = cfg.threads;
  j["record_wall_time"] = cfg.record_wall_time;
  return j;
}

struct Job {
  const RunPlan* plan;
  std::vector<ResultRow> rows;
  std::exception_ptr error;
};

auto row_key(const ResultRow& r) {
  return std::make_tuple(method_name(r.method), r.seed, r.m, r.p, r.theta, r.gamma, r.iter);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

double ExperimentConfig::theorem1_beta_x(std::size_t agents) const {
  const double eps = hyper.epsilon;
  return eps * std::min(1.0, static_cast<double>(agents) * eps) / 20.0;
}

std::string ExperimentConfig::to_json_text(int indent) const {
  return config_to_json(*this).dump(indent);
}

ExperimentConfig validate_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: not valid JSON: ") + e.what());
  }
  if (root.is_object() && root.contains("format")) {
    if (root["format"] != kManifestFormat) fail("format", "unrecognized manifest format");
    if (!root.contains("config")) fail("config", "manifest has no config");
    return parse_config(root["config"]);
  }
  return parse_config(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return validate_config(ss.str());
}

PreparedData prepare_data(const DatasetSpec& spec) {
  PreparedData out;
  if (spec.kind == DatasetSpec::Kind::libsvm) {
    ParseOptions opts{spec.dim};
    Dataset all = load_libsvm(spec.path, opts);
    if (spec.test_path) {
      out.train = std::move(all);
      if (!opts.dim) opts.dim = out.train.d;
      Dataset test = load_libsvm(*spec.test_path, opts);
      // The test file may use fewer features; pad to the training width.
      if (test.d != out.train.d) {
        ParseOptions wide{std::max(test.d, out.train.d)};
        out.train = load_libsvm(spec.path, wide);
        test = load_libsvm(*spec.test_path, wide);
      }
      out.test = std::move(test);
    } else {
      Split s = train_test_split(all, spec.test_fraction, spec.split_seed);
      out.train = std::move(s.train);
      out.test = std::move(s.test);
    }
  } else {
    Dataset all = synth_binary(spec.n, spec.d, spec.margin, spec.seed, SynthOptions{spec.flip_rate});
    Split s = train_test_split(all, spec.test_fraction, spec.split_seed);
    out.train = std::move(s.train);
    out.test = std::move(s.test);
  }
  if (spec.unit_scale) {
    out.scale = scale_to_unit_max_norm(out.train);
    scale_features(out.test, out.scale);
  }
  return out;
}

std::vector<RunPlan> plan_runs(const ExperimentConfig& cfg, const PreparedData& data) {
  std::vector<RunPlan> plans;
  // Problem-dependent quantities do not depend on the run seed: shard sizes
  // come from a block split and the bounds use the global maximum row norm.
  struct PerM {
    ProblemMeta meta;
    std::size_t max_shard = 0;
  };
  std::map<std::size_t, PerM> per_m;
  for (std::size_t m : cfg.m) {
    if (per_m.count(m)) continue;
    if (m > data.train.size()) {
      throw ConfigError("topology.m: m = " + std::to_string(m) + " exceeds the " +
                        std::to_string(data.train.size()) + " training samples");
    }
    Sharding sh = shard(data.train, m, cfg.dataset.shard_mode, 0);
    RobustLogisticRegression problem(data.train, sh, cfg.objective);
    per_m[m] = PerM{problem.meta(), sh.max_shard_size()};
  }
  std::map<std::pair<std::size_t, double>, std::pair<Graph, double>> graphs;
  for (std::size_t m : cfg.m) {
    for (double p : cfg.p) {
      if (graphs.count({m, p})) continue;
      Graph g = gen_erdos_renyi(m, p, cfg.topology_seed);
      const double lambda = metropolis_weights(g).lambda;
      graphs.emplace(std::make_pair(m, p), std::make_pair(std::move(g), lambda));
    }
  }

  for (Method method : cfg.methods) {
    const Algorithm algo = algorithm_for(method);
    for (std::uint64_t seed : cfg.seeds) {
      for (std::size_t m : cfg.m) {
        const PerM& pm = per_m.at(m);
        for (double p : cfg.p) {
          const auto& [graph, lambda] = graphs.at({m, p});
          for (double theta : cfg.privacy.theta) {
            for (double gamma : cfg.privacy.gamma) {
              RunPlan plan;
              plan.method = method;
              plan.seed = seed;
              plan.m = m;
              plan.p = p;
              plan.theta = theta;
              plan.gamma = gamma;
              plan.graph = graph;
              plan.lambda = lambda;
              plan.L_g = cfg.privacy.L_g.value_or(pm.meta.L_g);

              HyperParams hp;
              hp.batch = cfg.hyper.batch;
              hp.clip = cfg.hyper.clip;
              std::optional<std::size_t> schedule_T;
              if (cfg.hyper.preset == HyperSpec::Preset::theorem1) {
                if (!(lambda < 1.0)) {
                  throw ConfigError("hyperparameters.preset: theorem1 needs a spectral gap below 1");
                }
                ScheduleInputs in;
                in.epsilon = cfg.hyper.epsilon;
                in.kappa = pm.meta.kappa;
                in.lambda = lambda;
                in.m = m;
                in.L = pm.meta.L;
                in.shard_size = pm.max_shard;
                const Schedule s = theorem1_schedule(in);
                hp.beta_x = s.beta_x;
                hp.beta_y = s.beta_y;
                hp.eta_x = s.eta_x;
                hp.eta_y = s.eta_y;
                hp.b0 = cfg.hyper.b0.value_or(s.b0);
                schedule_T = s.T;
              } else {
                hp.beta_x = cfg.hyper.beta_x;
                hp.beta_y = cfg.hyper.beta_y;
                hp.eta_x = cfg.hyper.eta_x;
                hp.eta_y = cfg.hyper.eta_y;
                hp.b0 = cfg.hyper.b0.value_or(pm.max_shard);
              }
              plan.epoch_len = (pm.max_shard + hp.batch - 1) / hp.batch;
              if (cfg.iterations) {
                hp.T = *cfg.iterations;
              } else if (cfg.epochs) {
                hp.T = *cfg.epochs * plan.epoch_len;
              } else if (schedule_T) {
                hp.T = *schedule_T;
              } else {
                hp.T = 10 * plan.epoch_len;
              }
              plan.log_every = cfg.log_every_epochs * plan.epoch_len;

              if (algo.noise) {
                if (cfg.privacy.sigma) {
                  plan.sigma = *cfg.privacy.sigma;
                } else {
                  PrivacyBudget b{theta, gamma, cfg.privacy.c, plan.L_g};
                  plan.sigma = calibrate_sigma(b, hp.T, m).sigma_x;
                }
              }
              hp.sigma_x = hp.sigma_y = plan.sigma;
              hp.validate();
              plan.hp = hp;
              plans.push_back(std::move(plan));
            }
          }
        }
      }
    }
  }
  return plans;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_row(const ResultRow& r) {
  std::string s;
  s += method_name(r.method);
  s += ',' + std::to_string(r.seed);
  s += ',' + std::to_string(r.m);
  s += ',' + format_double(r.p);
  s += ',' + format_double(r.theta);
  s += ',' + format_double(r.gamma);
  s += ',' + format_double(r.sigma);
  s += ',' + std::to_string(r.iter);
  s += ',' + format_double(r.epoch);
  s += ',' + format_double(r.auroc_test);
  s += ',' + format_double(r.grad_norm);
  s += ',' + format_double(r.consensus_x);
  s += ',' + format_double(r.consensus_y);
  s += ',' + format_double(r.wall_ms);
  return s;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const PreparedData data = prepare_data(cfg.dataset);
  ExperimentResult result;
  result.plans = plan_runs(cfg, data);
  spdlog::info("experiment '{}': {} runs, {} train / {} test samples, d = {}", cfg.name,
               result.plans.size(), data.train.size(), data.test.size(), data.train.d);

  std::vector<Job> jobs(result.plans.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].plan = &result.plans[i];

  auto run_job = [&](Job& job) {
    const RunPlan& plan = *job.plan;
    spdlog::debug("run method={} seed={} m={} p={} theta={} gamma={} sigma={} T={}",
                  method_name(plan.method), plan.seed, plan.m, plan.p, plan.theta, plan.gamma,
                  plan.sigma, plan.hp.T);
    const Sharding sh = shard(data.train, plan.m, cfg.dataset.shard_mode, plan.seed);
    const RobustLogisticRegression problem(data.train, sh, cfg.objective);
    const MixingMatrix w = metropolis_weights(plan.graph);

    RunOptions opts;
    opts.log_every = plan.log_every;
    opts.compute_stationarity = cfg.compute_stationarity;
    opts.stationarity = cfg.stationarity;
    opts.threads = cfg.threads;
    opts.measure_time = cfg.record_wall_time;
    opts.logger = [&](const LogRow& lr) {
      ResultRow r;
      r.method = plan.method;
      r.seed = plan.seed;
      r.m = plan.m;
      r.p = plan.p;
      r.theta = plan.theta;
      r.gamma = plan.gamma;
      r.sigma = plan.sigma;
      r.iter = lr.iteration;
      r.epoch = static_cast<double>(lr.iteration) / static_cast<double>(plan.epoch_len);
      r.auroc_test = auroc(linear_scores(data.test, lr.x_bar), data.test.labels);
      r.grad_norm = lr.grad_norm;
      r.consensus_x = lr.consensus_x;
      r.consensus_y = lr.consensus_y;
      r.wall_ms = lr.wall_ms;
      job.rows.push_back(r);
    };
    try {
      run_method(plan.method, problem, plan.hp, w, plan.seed, opts);
    } catch (...) {
      job.error = std::current_exception();
    }
  };

  const std::size_t workers = std::min(cfg.jobs, jobs.size());
  if (workers <= 1) {
    for (Job& job : jobs) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(jobs[i]);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (Job& job : jobs) {
    result.rows.insert(result.rows.end(), job.rows.begin(), job.rows.end());
  }
  std::stable_sort(result.rows.begin(), result.rows.end(),
                   [](const ResultRow& a, const ResultRow& b) { return row_key(a) < row_key(b); });

  std::filesystem::create_directories(cfg.output);
  result.csv_path = cfg.output / "results.csv";
  result.manifest_path = cfg.output / "manifest.json";
  {
    std::ofstream out(result.csv_path, std::ios::binary);
    out << kResultsHeader << '\n';
    for (const ResultRow& r : result.rows) out << format_row(r) << '\n';
    if (!out) throw std::runtime_error("cannot write " + result.csv_path.string());
  }
  {
    json manifest;
    manifest["format"] = std::string(kManifestFormat);
    manifest["config"] = config_to_json(cfg);
    manifest["data"] = {{"train_samples", data.train.size()},
                        {"test_samples", data.test.size()},
                        {"features", data.train.d},
                        {"scale", data.scale}};
    json runs = json::array();
    for (const RunPlan& p : result.plans) {
      json edges = json::array();
      for (const auto& [i, j] : p.graph.edges()) edges.push_back({i, j});
      runs.push_back({{"method", std::string(method_name(p.method))},
                      {"seed", p.seed},
                      {"m", p.m},
                      {"p", p.p},
                      {"theta", p.theta},
                      {"gamma", p.gamma},
                      {"sigma", p.sigma},
                      {"L_g", p.L_g},
                      {"T", p.hp.T},
                      {"epoch_len", p.epoch_len},
                      {"eta_x", p.hp.eta_x},
                      {"eta_y", p.hp.eta_y},
                      {"beta_x", p.hp.beta_x},
                      {"beta_y", p.hp.beta_y},
                      {"b0", p.hp.b0},
                      {"batch", p.hp.batch},
                      {"lambda", p.lambda},
                      {"graph_repaired", p.graph.repaired},
                      {"edges", edges}});
    }
    manifest["runs"] = runs;
    std::ofstream out(result.manifest_path, std::ios::binary);
    out << manifest.dump(2) << '\n';
  }

  for (const Job& job : jobs) {
    if (!job.error) continue;
    const RunPlan& p = *job.plan;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(job.error);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    std::ostringstream msg;
    msg << "run failed (method=" << method_name(p.method) << " seed=" << p.seed << " m=" << p.m
        << " p=" << p.p << " theta=" << p.theta << " gamma=" << p.gamma << "): " << what
        << "; partial results written to " << result.csv_path.string();
    throw std::runtime_error(msg.str());
  }
  return result;
}

std::vector<SummaryRow> summarize_text(const std::vector<std::string>& csv_texts) {
  static const char* required[] = {"method", "seed", "m", "p", "theta", "gamma", "iter",
                                   "auroc_test"};
  using GroupKey = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  // group -> seed -> (iter, auroc) of the last row seen
  std::map<GroupKey, std::map<std::string, std::pair<std::size_t, double>>> groups;
  std::vector<GroupKey> order;

  for (std::size_t f = 0; f < csv_texts.size(); ++f) {
    std::istringstream in(csv_texts[f]);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("results file " + std::to_string(f) + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : required) {
      if (!col.count(name)) {
        throw SchemaError("results file " + std::to_string(f) + ": missing column '" + name + "'");
      }
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size()) {
        throw SchemaError("results file " + std::to_string(f) + " line " +
                          std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields");
      }
      GroupKey key{cells[col["method"]], cells[col["m"]], cells[col["p"]], cells[col["theta"]],
                   cells[col["gamma"]]};
      std::size_t iter = 0;
      double au = 0.0;
      try {
        iter = std::stoull(cells[col["iter"]]);
        au = std::stod(cells[col["auroc_test"]]);
      } catch (const std::exception&) {
        throw SchemaError("results file " + std::to_string(f) + " line " +
                          std::to_string(line_no) + ": bad iter or auroc_test value");
      }
      if (!groups.count(key)) order.push_back(key);
      auto& slot = groups[key][cells[col["seed"]]];
      if (iter >= slot.first) slot = {iter, au};
    }
  }

  std::vector<SummaryRow> out;
  for (const GroupKey& key : order) {
    const auto& seeds = groups.at(key);
    SummaryRow s;
    std::tie(s.method, s.m, s.p, s.theta, s.gamma) = key;
    s.seeds = seeds.size();
    s.min_auroc = std::numeric_limits<double>::infinity();
    s.max_auroc = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& [seed, last] : seeds) {
      sum += last.second;
      s.min_auroc = std::min(s.min_auroc, last.second);
      s.max_auroc = std::max(s.max_auroc, last.second);
    }
    s.mean_auroc = sum / static_cast<double>(s.seeds);
    out.push_back(s);
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<std::filesystem::path>& csv_paths) {
  if (csv_paths.empty()) throw std::invalid_argument("summarize: no result files given");
  std::vector<std::string> texts;
  for (const auto& p : csv_paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    texts.push_back(ss.str());
  }
  return summarize_text(texts);
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"method", "m", "p", "theta", "gamma", "seeds", "auroc_mean", "auroc_min",
                   "auroc_max"});
  auto fixed = [](double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4) << v;
    return ss.str();
  };
  for (const auto& r : rows) {
    cells.push_back({r.method, r.m, r.p, r.theta, r.gamma, std::to_string(r.seeds),
                     fixed(r.mean_auroc), fixed(r.min_auroc), fixed(r.max_auroc)});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << "  ";
      if (i == 0) {
        out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      } else {
        out << std::right << std::setw(static_cast<int>(width[i])) << row[i];
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "method,m,p,theta,gamma,seeds,auroc_mean,auroc_min,auroc_max\n";
  for (const auto& r : rows) {
    out += r.method + ',' + r.m + ',' + r.p + ',' + r.theta + ',' + r.gamma + ',' +
           std::to_string(r.seeds) + ',' + format_double(r.mean_auroc) + ',' +
           format_double(r.min_auroc) + ',' + format_double(r.max_auroc) + '\n';
  }
  return out;
}

}  // namespace dpmix
