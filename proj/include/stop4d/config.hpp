#pragma once

// Pipeline configuration: defaults, validation, key=value text form.

#include "stop4d/core.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace stop4d {

enum class Aggregate { Dbscan, Nms, Centers };
enum class GeoFeatures { Center, CenterRadius, Full };
enum class Variant { Voting, Gaussian };
enum class Sampling { Fps, Random };

/// Width of the aggregation vector for a feature toggle: 3, 4 or 7.
inline int geo_feature_width(GeoFeatures f) {
  switch (f) {
    case GeoFeatures::Center: return 3;
    case GeoFeatures::CenterRadius: return 4;
    case GeoFeatures::Full: return 7;
  }
  return 7;
}

struct LossWeights {
  double alpha = 1.0;  // semantic
  double beta = 1.0;   // voting
  double gamma = 0.0;  // aggregation
  bool operator==(const LossWeights&) const = default;
};

struct Config {
  // Volume formation
  int temporal_window = 2;
  double sample_fraction = 0.10;
  double objectness_floor = 1e-3;

  // Proposals
  int num_proposals = 500;
  double group_radius = 0.6;
  Sampling sampling = Sampling::Fps;

  // Aggregation
  Aggregate aggregate = Aggregate::Dbscan;
  GeoFeatures features = GeoFeatures::Full;
  double dbscan_eps = 0.6;
  int dbscan_min_points = 1;
  double nms_iou = 0.25;

  // Gaussian comparison variant
  Variant variant = Variant::Voting;
  double gaussian_sigma = 1.0;
  double objectness_threshold = 0.7;
  double probability_threshold = 0.5;
  double selection_radius = 0.0;

  // Tracking
  double iou_stitch_threshold = 0.5;

  // Network
  int feature_dim = 256;   // F
  int proposal_dim = 128;  // D
  int num_classes = 4;
  std::vector<int> thing_classes{1, 2};
  std::vector<int> stuff_classes{3};
  double objectness_sigma = 0.6;

  // Training
  double huber_delta = 1.0;
  LossWeights phase1_weights{1.0, 1.0, 0.0};
  LossWeights phase2_weights{0.0, 0.0, 1.0};
  int phase1_iterations = 2000;
  int phase2_iterations = 800;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double grad_clip = 5.0;
  int batch_points = 256;
  int batch_proposals = 4;

  // Oracle mode: Gaussian noise (meters, per axis) added to ground-truth votes.
  double oracle_vote_noise = 0.0;

  std::uint64_t rng_seed = 42;
  int threads = 0;  // 0 = all cores

  /// E, derived from the feature toggle.
  int aggregation_dim() const { return geo_feature_width(features); }

  bool is_thing(int cls) const {
    return std::find(thing_classes.begin(), thing_classes.end(), cls) != thing_classes.end();
  }
  bool is_stuff(int cls) const {
    return std::find(stuff_classes.begin(), stuff_classes.end(), cls) != stuff_classes.end();
  }
  /// Classes scored by the metrics (things then stuff, ascending).
  std::vector<int> eval_classes() const {
    std::vector<int> c = thing_classes;
    c.insert(c.end(), stuff_classes.begin(), stuff_classes.end());
    std::sort(c.begin(), c.end());
    return c;
  }
  int worker_threads() const { return threads > 0 ? threads : hardware_threads(); }

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k << " = " << get(k) << '\n';
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split(v, ',')) out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// Shortest text that parses back to the same double.
inline std::string fmt_double(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

inline LossWeights parse_weights(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 3) throw ConfigError(key, "expected alpha,beta,gamma");
  return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_double(key, parts[2])};
}

}  // namespace detail

inline std::string to_string(Aggregate a) {
  switch (a) {
    case Aggregate::Dbscan: return "dbscan";
    case Aggregate::Nms: return "nms";
    case Aggregate::Centers: return "centers";
  }
  return "dbscan";
}
inline std::string to_string(GeoFeatures f) {
  switch (f) {
    case GeoFeatures::Center: return "center";
    case GeoFeatures::CenterRadius: return "center+radius";
    case GeoFeatures::Full: return "full";
  }
  return "full";
}
inline std::string to_string(Variant v) { return v == Variant::Voting ? "voting" : "gaussian"; }
inline std::string to_string(Sampling s) { return s == Sampling::Fps ? "fps" : "random"; }

// ---------------------------------------------------------------------------
// Key table
// ---------------------------------------------------------------------------

namespace detail {

struct KeyHandler {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <class T>
KeyHandler int_key(T Config::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.*field = static_cast<T>(parse_int(k, v));
          },
          [field](const Config& c) { return std::to_string(c.*field); }};
}

inline KeyHandler double_key(double Config::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.*field = parse_double(k, v);
          },
          [field](const Config& c) { return fmt_double(c.*field); }};
}

inline const std::map<std::string, KeyHandler>& key_table() {
  static const std::map<std::string, KeyHandler> table = [] {
    std::map<std::string, KeyHandler> t;
    t["temporal_window"] = int_key(&Config::temporal_window);
    t["sample_fraction"] = double_key(&Config::sample_fraction);
    t["objectness_floor"] = double_key(&Config::objectness_floor);
    t["num_proposals"] = int_key(&Config::num_proposals);
    t["group_radius"] = double_key(&Config::group_radius);
    t["dbscan_eps"] = double_key(&Config::dbscan_eps);
    t["dbscan_min_points"] = int_key(&Config::dbscan_min_points);
    t["nms_iou"] = double_key(&Config::nms_iou);
    t["gaussian_sigma"] = double_key(&Config::gaussian_sigma);
    t["objectness_threshold"] = double_key(&Config::objectness_threshold);
    t["probability_threshold"] = double_key(&Config::probability_threshold);
    t["selection_radius"] = double_key(&Config::selection_radius);
    t["iou_stitch_threshold"] = double_key(&Config::iou_stitch_threshold);
    t["num_classes"] = int_key(&Config::num_classes);
    t["objectness_sigma"] = double_key(&Config::objectness_sigma);
    t["huber_delta"] = double_key(&Config::huber_delta);
    t["phase1_iterations"] = int_key(&Config::phase1_iterations);
    t["phase2_iterations"] = int_key(&Config::phase2_iterations);
    t["learning_rate"] = double_key(&Config::learning_rate);
    t["momentum"] = double_key(&Config::momentum);
    t["grad_clip"] = double_key(&Config::grad_clip);
    t["batch_points"] = int_key(&Config::batch_points);
    t["batch_proposals"] = int_key(&Config::batch_proposals);
    t["oracle_vote_noise"] = double_key(&Config::oracle_vote_noise);
    t["rng_seed"] = int_key(&Config::rng_seed);
    t["threads"] = int_key(&Config::threads);

    t["feature_dims"] = {
        [](Config& c, const std::string& k, const std::string& v) {
          const auto dims = parse_int_list(k, v);
          if (dims.size() != 2 && dims.size() != 3) throw ConfigError(k, "expected F,D[,E]");
          c.feature_dim = dims[0];
          c.proposal_dim = dims[1];
          if (dims.size() == 3 && dims[2] != geo_feature_width(c.features)) {
            // E follows the feature toggle; accept it only when consistent.
            if (dims[2] == 3) c.features = GeoFeatures::Center;
            else if (dims[2] == 4) c.features = GeoFeatures::CenterRadius;
            else if (dims[2] == 7) c.features = GeoFeatures::Full;
            else throw ConfigError(k, "E must be 3, 4 or 7");
          }
        },
        [](const Config& c) {
          return std::to_string(c.feature_dim) + "," + std::to_string(c.proposal_dim) + "," +
                 std::to_string(c.aggregation_dim());
        }};
    t["thing_classes"] = {[](Config& c, const std::string& k,
                             const std::string& v) { c.thing_classes = parse_int_list(k, v); },
                          [](const Config& c) { return join(c.thing_classes); }};
    t["stuff_classes"] = {[](Config& c, const std::string& k,
                             const std::string& v) { c.stuff_classes = parse_int_list(k, v); },
                          [](const Config& c) { return join(c.stuff_classes); }};
    t["loss_weights_phase1"] = {
        [](Config& c, const std::string& k, const std::string& v) {
          c.phase1_weights = parse_weights(k, v);
        },
        [](const Config& c) {
          return fmt_double(c.phase1_weights.alpha) + "," + fmt_double(c.phase1_weights.beta) +
                 "," + fmt_double(c.phase1_weights.gamma);
        }};
    t["loss_weights_phase2"] = {
        [](Config& c, const std::string& k, const std::string& v) {
          c.phase2_weights = parse_weights(k, v);
        },
        [](const Config& c) {
          return fmt_double(c.phase2_weights.alpha) + "," + fmt_double(c.phase2_weights.beta) +
                 "," + fmt_double(c.phase2_weights.gamma);
        }};
    t["aggregate"] = {[](Config& c, const std::string& k, const std::string& v) {
                        if (v == "dbscan") c.aggregate = Aggregate::Dbscan;
                        else if (v == "nms") c.aggregate = Aggregate::Nms;
                        else if (v == "centers") c.aggregate = Aggregate::Centers;
                        else throw ConfigError(k, "expected dbscan|nms|centers");
                      },
                      [](const Config& c) { return to_string(c.aggregate); }};
    t["features"] = {[](Config& c, const std::string& k, const std::string& v) {
                       if (v == "center") c.features = GeoFeatures::Center;
                       else if (v == "center+radius") c.features = GeoFeatures::CenterRadius;
                       else if (v == "full") c.features = GeoFeatures::Full;
                       else throw ConfigError(k, "expected center|center+radius|full");
                     },
                     [](const Config& c) { return to_string(c.features); }};
    t["variant"] = {[](Config& c, const std::string& k, const std::string& v) {
                      if (v == "voting") c.variant = Variant::Voting;
                      else if (v == "gaussian") c.variant = Variant::Gaussian;
                      else throw ConfigError(k, "expected voting|gaussian");
                    },
                    [](const Config& c) { return to_string(c.variant); }};
    t["sampling"] = {[](Config& c, const std::string& k, const std::string& v) {
                       if (v == "fps") c.sampling = Sampling::Fps;
                       else if (v == "random") c.sampling = Sampling::Random;
                       else throw ConfigError(k, "expected fps|random");
                     },
                     [](const Config& c) { return to_string(c.sampling); }};
    return t;
  }();
  return table;
}

}  // namespace detail

inline const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : detail::key_table()) out.push_back(name);
    return out;
  }();
  return k;
}

inline void Config::set(const std::string& key, const std::string& value) {
  const auto& t = detail::key_table();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError(key, "unknown configuration key");
  it->second.set(*this, key, detail::trim(value));
}

inline std::string Config::get(const std::string& key) const {
  const auto& t = detail::key_table();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError(key, "unknown configuration key");
  return it->second.get(*this);
}

inline void Config::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(temporal_window >= 1, "temporal_window", "must be >= 1");
  require(num_proposals >= 1, "num_proposals", "must be >= 1");
  require(group_radius > 0.0, "group_radius", "must be > 0");
  require(dbscan_eps > 0.0, "dbscan_eps", "must be > 0");
  require(dbscan_min_points >= 1, "dbscan_min_points", "must be >= 1");
  require(iou_stitch_threshold >= 0.0 && iou_stitch_threshold <= 1.0, "iou_stitch_threshold",
          "must lie in [0, 1]");
  require(sample_fraction > 0.0 && sample_fraction <= 1.0, "sample_fraction",
          "must lie in (0, 1]");
  require(objectness_floor > 0.0, "objectness_floor", "must be > 0");
  require(huber_delta > 0.0, "huber_delta", "must be > 0");
  require(objectness_sigma > 0.0, "objectness_sigma", "must be > 0");
  require(gaussian_sigma > 0.0, "gaussian_sigma", "must be > 0");
  require(probability_threshold > 0.0 && probability_threshold <= 1.0, "probability_threshold",
          "must lie in (0, 1]");
  require(objectness_threshold >= 0.0 && objectness_threshold <= 1.0, "objectness_threshold",
          "must lie in [0, 1]");
  require(selection_radius >= 0.0, "selection_radius", "must be >= 0");
  require(nms_iou >= 0.0 && nms_iou <= 1.0, "nms_iou", "must lie in [0, 1]");
  require(feature_dim >= 1 && proposal_dim >= 1, "feature_dims", "F and D must be >= 1");
  require(num_classes >= 2, "num_classes", "must be >= 2");
  for (int c : thing_classes)
    require(c > 0 && c < num_classes, "thing_classes", "ids must lie in [1, num_classes)");
  for (int c : stuff_classes)
    require(c > 0 && c < num_classes, "stuff_classes", "ids must lie in [1, num_classes)");
  for (int c : thing_classes)
    require(!is_stuff(c), "thing_classes", "a class cannot be both thing and stuff");
  require(phase1_iterations >= 0 && phase2_iterations >= 0, "phase1_iterations",
          "iteration counts must be >= 0");
  require(learning_rate > 0.0, "learning_rate", "must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(grad_clip >= 0.0, "grad_clip", "must be >= 0 (0 disables)");
  require(batch_points >= 1, "batch_points", "must be >= 1");
  require(batch_proposals >= 1, "batch_proposals", "must be >= 1");
  require(oracle_vote_noise >= 0.0, "oracle_vote_noise", "must be >= 0");
  require(threads >= 0, "threads", "must be >= 0");
}

/// Applies `key = value` lines ('#' starts a comment) on top of `base`.
inline Config parse_config_text(const std::string& text, Config base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    base.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline Config load_config(const std::string& path, Config base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

}  // namespace stop4d
