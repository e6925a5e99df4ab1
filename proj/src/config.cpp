#include "safelse/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace safelse::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& message) {
  throw std::runtime_error("config error: " + message);
}

void check_keys(const json& obj, const std::string& scope,
                const std::set<std::string>& allowed) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      fail("unknown key \"" + (scope.empty() ? "" : scope + ".") + item.key() +
           "\"");
    }
  }
}

double get_number(const json& obj, const std::string& scope,
                  const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) fail(scope + "." + key + " must be a number");
  return obj[key].get<double>();
}

long get_integer(const json& obj, const std::string& scope,
                 const std::string& key, long fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) {
    fail(scope + "." + key + " must be an integer");
  }
  return obj[key].get<long>();
}

std::string get_string(const json& obj, const std::string& scope,
                       const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) fail(scope + "." + key + " must be a string");
  return obj[key].get<std::string>();
}

// Scalar-or-list numeric grid axis.
std::vector<double> get_grid(const json& obj, const std::string& scope,
                             const std::string& key,
                             std::vector<double> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& item : v) {
      if (!item.is_number()) fail(scope + "." + key + " must hold numbers");
      out.push_back(item.get<double>());
    }
    if (out.empty()) fail(scope + "." + key + " must not be empty");
    return out;
  }
  fail(scope + "." + key + " must be a number or a list of numbers");
}

std::vector<long> get_int_grid(const json& obj, const std::string& scope,
                               const std::string& key,
                               std::vector<long> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (v.is_number_integer()) return {v.get<long>()};
  if (v.is_array()) {
    std::vector<long> out;
    for (const auto& item : v) {
      if (!item.is_number_integer()) {
        fail(scope + "." + key + " must hold integers");
      }
      out.push_back(item.get<long>());
    }
    if (out.empty()) fail(scope + "." + key + " must not be empty");
    return out;
  }
  fail(scope + "." + key + " must be an integer or a list of integers");
}

std::vector<std::string> get_modes(const json& obj, const std::string& scope,
                                   std::vector<std::string> fallback,
                                   const std::set<std::string>& allowed) {
  if (!obj.contains("modes")) return fallback;
  if (!obj["modes"].is_array()) fail(scope + ".modes must be a list");
  std::vector<std::string> out;
  for (const auto& item : obj["modes"]) {
    if (!item.is_string() || !allowed.count(item.get<std::string>())) {
      fail(scope + ".modes holds an unknown mode");
    }
    out.push_back(item.get<std::string>());
  }
  if (out.empty()) fail(scope + ".modes must not be empty");
  return out;
}

void require_positive(double value, const std::string& key) {
  if (!(value > 0.0)) fail(key + " must be > 0");
}

void require_rho(double value, const std::string& key) {
  if (!(value > 0.0 && value <= 1.0)) fail(key + " must be in (0, 1]");
}

BoundsConfig parse_bounds(const json& obj) {
  check_keys(obj, "bounds", {"instances", "max_atoms"});
  BoundsConfig c;
  c.instances = static_cast<int>(get_integer(obj, "bounds", "instances", c.instances));
  c.max_atoms = static_cast<int>(get_integer(obj, "bounds", "max_atoms", c.max_atoms));
  if (c.instances < 1) fail("bounds.instances must be >= 1");
  if (c.max_atoms < 1) fail("bounds.max_atoms must be >= 1");
  return c;
}

CvarConfig parse_cvar(const json& obj) {
  check_keys(obj, "cvar", {"instances", "max_atoms"});
  CvarConfig c;
  c.instances = static_cast<int>(get_integer(obj, "cvar", "instances", c.instances));
  c.max_atoms = static_cast<int>(get_integer(obj, "cvar", "max_atoms", c.max_atoms));
  if (c.instances < 1) fail("cvar.instances must be >= 1");
  if (c.max_atoms < 1) fail("cvar.max_atoms must be >= 1");
  return c;
}

KlDroExpConfig parse_dro_kl(const json& obj) {
  check_keys(obj, "dro-kl",
             {"lambda", "rho", "batch_size", "stepsize", "momentum", "epochs",
              "n", "d", "dataset_csv", "modes"});
  KlDroExpConfig c;
  c.lambda = get_number(obj, "dro-kl", "lambda", c.lambda);
  require_positive(c.lambda, "dro-kl.lambda");
  c.rho = get_number(obj, "dro-kl", "rho", c.rho);
  require_rho(c.rho, "dro-kl.rho");
  c.batch_sizes = get_int_grid(obj, "dro-kl", "batch_size", c.batch_sizes);
  for (long b : c.batch_sizes) {
    if (b < 1) fail("dro-kl.batch_size must be >= 1");
  }
  c.stepsizes = get_grid(obj, "dro-kl", "stepsize", c.stepsizes);
  for (double s : c.stepsizes) require_positive(s, "dro-kl.stepsize");
  c.momentum = get_number(obj, "dro-kl", "momentum", c.momentum);
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
    fail("dro-kl.momentum must be in [0, 1)");
  }
  c.epochs = static_cast<int>(get_integer(obj, "dro-kl", "epochs", c.epochs));
  if (c.epochs < 0) fail("dro-kl.epochs must be >= 0");
  c.n = get_integer(obj, "dro-kl", "n", c.n);
  c.d = get_integer(obj, "dro-kl", "d", c.d);
  if (c.n < 1 || c.d < 1) fail("dro-kl.n and dro-kl.d must be >= 1");
  c.dataset_csv = get_string(obj, "dro-kl", "dataset_csv", c.dataset_csv);
  c.modes = get_modes(obj, "dro-kl", c.modes, {"baseline", "safe"});
  for (long b : c.batch_sizes) {
    if (b > c.n) fail("dro-kl.batch_size must be <= n");
  }
  return c;
}

UotDroExpConfig parse_dro_uot(const json& obj) {
  check_keys(obj, "dro-uot",
             {"lambda", "beta", "rho", "inner_iters", "inner_stepsize",
              "cost_scale", "stepsize", "iters", "eval_every", "train_size",
              "val_size", "test_size", "flip_rate", "modes",
              "baseline_stepsize_factor"});
  UotDroExpConfig c;
  c.lambda = get_number(obj, "dro-uot", "lambda", c.lambda);
  require_positive(c.lambda, "dro-uot.lambda");
  c.beta = get_number(obj, "dro-uot", "beta", c.beta);
  require_positive(c.beta, "dro-uot.beta");
  c.rho = get_number(obj, "dro-uot", "rho", c.rho);
  require_rho(c.rho, "dro-uot.rho");
  c.inner_iters =
      static_cast<int>(get_integer(obj, "dro-uot", "inner_iters", c.inner_iters));
  if (c.inner_iters < 1) fail("dro-uot.inner_iters must be >= 1");
  c.inner_stepsize =
      get_number(obj, "dro-uot", "inner_stepsize", c.inner_stepsize);
  if (c.inner_stepsize < 0.0) fail("dro-uot.inner_stepsize must be >= 0");
  c.cost_scale = get_number(obj, "dro-uot", "cost_scale", c.cost_scale);
  require_positive(c.cost_scale, "dro-uot.cost_scale");
  c.stepsizes = get_grid(obj, "dro-uot", "stepsize", c.stepsizes);
  for (double s : c.stepsizes) require_positive(s, "dro-uot.stepsize");
  c.iters = get_integer(obj, "dro-uot", "iters", c.iters);
  if (c.iters < 0) fail("dro-uot.iters must be >= 0");
  c.eval_every = get_integer(obj, "dro-uot", "eval_every", c.eval_every);
  if (c.eval_every < 1) fail("dro-uot.eval_every must be >= 1");
  c.train_size = get_integer(obj, "dro-uot", "train_size", c.train_size);
  c.val_size = get_integer(obj, "dro-uot", "val_size", c.val_size);
  c.test_size = get_integer(obj, "dro-uot", "test_size", c.test_size);
  if (c.train_size < 2 || c.val_size < 1 || c.test_size < 1) {
    fail("dro-uot split sizes must be positive");
  }
  c.flip_rate = get_number(obj, "dro-uot", "flip_rate", c.flip_rate);
  if (!(c.flip_rate >= 0.0 && c.flip_rate < 0.5)) {
    fail("dro-uot.flip_rate must be in [0, 0.5)");
  }
  c.modes = get_modes(obj, "dro-uot", c.modes, {"erm", "baseline", "safe"});
  c.baseline_stepsize_factor = get_number(obj, "dro-uot",
                                          "baseline_stepsize_factor",
                                          c.baseline_stepsize_factor);
  if (c.baseline_stepsize_factor < 0.0) {
    fail("dro-uot.baseline_stepsize_factor must be >= 0");
  }
  return c;
}

EotExpConfig parse_eot(const json& obj) {
  check_keys(obj, "eot",
             {"epsilon", "rho", "C", "bandwidth", "iters", "test_size",
              "reference_runs", "reference_C", "modes"});
  EotExpConfig c;
  c.epsilon = get_number(obj, "eot", "epsilon", c.epsilon);
  if (!(c.epsilon > 0.0)) fail("eot.epsilon must be > 0");
  c.rhos = get_grid(obj, "eot", "rho", c.rhos);
  for (double r : c.rhos) require_rho(r, "eot.rho");
  c.Cs = get_grid(obj, "eot", "C", c.Cs);
  for (double v : c.Cs) require_positive(v, "eot.C");
  c.bandwidths = get_grid(obj, "eot", "bandwidth", c.bandwidths);
  for (double v : c.bandwidths) require_positive(v, "eot.bandwidth");
  c.iters = get_integer(obj, "eot", "iters", c.iters);
  if (c.iters < 0) fail("eot.iters must be >= 0");
  c.test_size = get_integer(obj, "eot", "test_size", c.test_size);
  if (c.test_size < 1) fail("eot.test_size must be >= 1");
  c.reference_runs =
      static_cast<int>(get_integer(obj, "eot", "reference_runs", c.reference_runs));
  if (c.reference_runs < 1) fail("eot.reference_runs must be >= 1");
  c.reference_C = get_number(obj, "eot", "reference_C", c.reference_C);
  require_positive(c.reference_C, "eot.reference_C");
  c.modes = get_modes(obj, "eot", c.modes, {"dual_baseline", "safe_semidual"});
  return c;
}

OverflowDemoConfig parse_overflow(const json& obj) {
  check_keys(obj, "overflow-demo", {"z", "epsilon"});
  OverflowDemoConfig c;
  c.z = get_number(obj, "overflow-demo", "z", c.z);
  c.epsilon = get_number(obj, "overflow-demo", "epsilon", c.epsilon);
  require_positive(c.epsilon, "overflow-demo.epsilon");
  return c;
}

}  // namespace

ExperimentConfig parse_config_json(const json& doc) {
  if (!doc.is_object()) fail("top level must be a JSON object");
  check_keys(doc, "",
             {"experiment", "seed", "repetitions", "output_dir", "bounds",
              "cvar", "dro-kl", "dro-uot", "eot", "overflow-demo"});
  ExperimentConfig config;
  if (!doc.contains("experiment")) fail("missing key \"experiment\"");
  config.experiment = get_string(doc, "", "experiment", "");
  const std::set<std::string> known{"bounds",  "cvar", "dro-kl",
                                    "dro-uot", "eot",  "overflow-demo"};
  if (!known.count(config.experiment)) {
    fail("experiment must be one of bounds, cvar, dro-kl, dro-uot, eot, "
         "overflow-demo");
  }
  const long seed = get_integer(doc, "", "seed", 1);
  if (seed < 0) fail("seed must be >= 0");
  config.seed = static_cast<std::uint64_t>(seed);
  config.repetitions =
      static_cast<int>(get_integer(doc, "", "repetitions", config.repetitions));
  if (config.repetitions < 1) fail("repetitions must be >= 1");
  config.output_dir = get_string(doc, "", "output_dir", config.output_dir);
  if (config.output_dir.empty()) fail("output_dir must not be empty");

  if (doc.contains("bounds")) config.bounds = parse_bounds(doc["bounds"]);
  if (doc.contains("cvar")) config.cvar = parse_cvar(doc["cvar"]);
  if (doc.contains("dro-kl")) config.dro_kl = parse_dro_kl(doc["dro-kl"]);
  if (doc.contains("dro-uot")) config.dro_uot = parse_dro_uot(doc["dro-uot"]);
  if (doc.contains("eot")) config.eot = parse_eot(doc["eot"]);
  if (doc.contains("overflow-demo")) {
    config.overflow_demo = parse_overflow(doc["overflow-demo"]);
  }
  return config;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& err) {
    fail(std::string("invalid JSON: ") + err.what());
  }
  return parse_config_json(doc);
}

json serialize_config(const ExperimentConfig& c) {
  json doc;
  doc["experiment"] = c.experiment;
  doc["seed"] = c.seed;
  doc["repetitions"] = c.repetitions;
  doc["output_dir"] = c.output_dir;
  doc["bounds"] = {{"instances", c.bounds.instances},
                   {"max_atoms", c.bounds.max_atoms}};
  doc["cvar"] = {{"instances", c.cvar.instances},
                 {"max_atoms", c.cvar.max_atoms}};
  doc["dro-kl"] = {{"lambda", c.dro_kl.lambda},
                   {"rho", c.dro_kl.rho},
                   {"batch_size", c.dro_kl.batch_sizes},
                   {"stepsize", c.dro_kl.stepsizes},
                   {"momentum", c.dro_kl.momentum},
                   {"epochs", c.dro_kl.epochs},
                   {"n", c.dro_kl.n},
                   {"d", c.dro_kl.d},
                   {"dataset_csv", c.dro_kl.dataset_csv},
                   {"modes", c.dro_kl.modes}};
  doc["dro-uot"] = {{"lambda", c.dro_uot.lambda},
                    {"beta", c.dro_uot.beta},
                    {"rho", c.dro_uot.rho},
                    {"inner_iters", c.dro_uot.inner_iters},
                    {"inner_stepsize", c.dro_uot.inner_stepsize},
                    {"cost_scale", c.dro_uot.cost_scale},
                    {"stepsize", c.dro_uot.stepsizes},
                    {"iters", c.dro_uot.iters},
                    {"eval_every", c.dro_uot.eval_every},
                    {"train_size", c.dro_uot.train_size},
                    {"val_size", c.dro_uot.val_size},
                    {"test_size", c.dro_uot.test_size},
                    {"flip_rate", c.dro_uot.flip_rate},
                    {"modes", c.dro_uot.modes},
                    {"baseline_stepsize_factor",
                     c.dro_uot.baseline_stepsize_factor}};
  doc["eot"] = {{"epsilon", c.eot.epsilon},
                {"rho", c.eot.rhos},
                {"C", c.eot.Cs},
                {"bandwidth", c.eot.bandwidths},
                {"iters", c.eot.iters},
                {"test_size", c.eot.test_size},
                {"reference_runs", c.eot.reference_runs},
                {"reference_C", c.eot.reference_C},
                {"modes", c.eot.modes}};
  doc["overflow-demo"] = {{"z", c.overflow_demo.z},
                          {"epsilon", c.overflow_demo.epsilon}};
  return doc;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // The hash identifies the experiment definition; where outputs land is not
  // part of it.
  json doc = serialize_config(config);
  doc.erase("output_dir");
  const std::string canonical = doc.dump();
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (const char ch : canonical) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace safelse::cli
