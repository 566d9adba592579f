#include "lpdesc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ValidationError("config key '" + key + "': invalid value '" + value + "' (" + why + ")");
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) bad(key, value, "expected a number");
  return v;
}

long long to_int(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) bad(key, value, "expected an integer");
  return v;
}

std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field real(double RunConfig::*member, double lo, double hi, bool open_lo = false, bool open_hi = false) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            const double x = to_double(k, v);
            if ((open_lo ? !(x > lo) : !(x >= lo)) || (open_hi ? !(x < hi) : !(x <= hi))) {
              bad(k, v, "out of range");
            }
            c.*member = x;
          },
          [=](const RunConfig& c) { return show(c.*member); }};
}

Field integer(int RunConfig::*member, long long lo, long long hi) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            const long long x = to_int(k, v);
            if (x < lo || x > hi) bad(k, v, "out of range");
            c.*member = static_cast<int>(x);
          },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field text(std::string RunConfig::*member) {
  return {[=](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& schema() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    constexpr double inf = INFINITY;
    std::vector<std::pair<std::string, Field>> f;
    f.emplace_back("grid_kind", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                        try {
                                          c.grid_kind = parse_grid_kind(v);
                                        } catch (const Error&) {
                                          bad(k, v, "expected logpolar or cartesian");
                                        }
                                      },
                                      [](const RunConfig& c) { return std::string(to_string(c.grid_kind)); }});
    f.emplace_back("L", integer(&RunConfig::L, 2, 4096));
    f.emplace_back("lambda", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                     const double x = to_double(k, v);
                                     if (!(x > 0.0)) bad(k, v, "must be positive");
                                     c.lambda = x;
                                   },
                                   [](const RunConfig& c) { return show(c.resolved_lambda()); }});
    f.emplace_back("K", integer(&RunConfig::K, 2, 1 << 20));
    f.emplace_back("epochs", integer(&RunConfig::epochs, 1, 1 << 20));
    f.emplace_back("learning_rate", real(&RunConfig::learning_rate, 0.0, inf, true));
    f.emplace_back("momentum", real(&RunConfig::momentum, 0.0, 1.0, false, true));
    f.emplace_back("weight_decay", real(&RunConfig::weight_decay, 0.0, inf));
    f.emplace_back("dropout", real(&RunConfig::dropout, 0.0, 1.0, false, true));
    f.emplace_back("jitter_std_deg", real(&RunConfig::jitter_std_deg, 0.0, 180.0));
    f.emplace_back("margin", real(&RunConfig::margin, 0.0, inf, true));
    f.emplace_back("distance_power", integer(&RunConfig::distance_power, 1, 2));
    f.emplace_back("seed", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                   const long long x = to_int(k, v);
                                   if (x < 0) bad(k, v, "must be non-negative");
                                   c.seed = static_cast<std::uint64_t>(x);
                                 },
                                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.emplace_back("threads", integer(&RunConfig::threads, 1, 1024));
    f.emplace_back("batches_per_epoch", integer(&RunConfig::batches_per_epoch, 0, 1 << 24));
    f.emplace_back("dataset", text(&RunConfig::dataset));
    f.emplace_back("checkpoint", text(&RunConfig::checkpoint));
    f.emplace_back("out", text(&RunConfig::out));
    f.emplace_back("synth_pairs", integer(&RunConfig::synth_pairs, 1, 100000));
    f.emplace_back("eval_pairs", integer(&RunConfig::eval_pairs, 1, 100000));
    f.emplace_back("synth_size", integer(&RunConfig::synth_size, 16, 8192));
    f.emplace_back("synth_keypoints", integer(&RunConfig::synth_keypoints, 1, 1000000));
    f.emplace_back("synth_min_scale", real(&RunConfig::synth_min_scale, 0.25, 4.0));
    f.emplace_back("synth_max_scale", real(&RunConfig::synth_max_scale, 0.25, 4.0));
    f.emplace_back("synth_max_rotation_deg", real(&RunConfig::synth_max_rotation_deg, 0.0, 25.0));
    f.emplace_back("synth_noise", real(&RunConfig::synth_noise, 0.0, 1.0));
    f.emplace_back("synth_max_scale_mismatch", real(&RunConfig::synth_max_scale_mismatch, 1.0, 16.0));
    f.emplace_back("synth_location_noise_px", real(&RunConfig::synth_location_noise_px, 0.0, 10.0));
    f.emplace_back("synth_orientation_noise_deg", real(&RunConfig::synth_orientation_noise_deg, 0.0, 180.0));
    f.emplace_back("synth_occluders", integer(&RunConfig::synth_occluders, 0, 100000));
    f.emplace_back("synth_sigma_min", real(&RunConfig::synth_sigma_min, 0.0, inf, true));
    f.emplace_back("synth_sigma_max", real(&RunConfig::synth_sigma_max, 0.0, inf, true));
    f.emplace_back("projection_tol", real(&RunConfig::projection_tol, 0.0, inf, true));
    f.emplace_back("orientation_tol", real(&RunConfig::orientation_tol, 0.0, 180.0, true));
    f.emplace_back("min_separation", real(&RunConfig::min_separation, 0.0, inf, true));
    f.emplace_back("distractor_exclusion", real(&RunConfig::distractor_exclusion, 0.0, inf, true));
    f.emplace_back("negatives_per_positive", integer(&RunConfig::negatives_per_positive, 1, 100000));
    f.emplace_back("retrieval_matches", integer(&RunConfig::retrieval_matches, 1, 1 << 24));
    f.emplace_back("retrieval_distractors", integer(&RunConfig::retrieval_distractors, 0, 1 << 24));
    return f;
  }();
  return fields;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : schema()) {
    if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

double RunConfig::resolved_lambda() const {
  if (lambda) return *lambda;
  return grid_kind == GridKind::logpolar ? 96.0 : 16.0;
}

GridSpec RunConfig::grid_spec() const { return GridSpec{L, resolved_lambda(), grid_kind}; }

OptimConfig RunConfig::optim() const { return OptimConfig{learning_rate, momentum, weight_decay, epochs}; }

TripletLossConfig RunConfig::loss() const { return TripletLossConfig{margin, distance_power}; }

FilterConfig RunConfig::filters() const {
  return FilterConfig{projection_tol, orientation_tol, min_separation, distractor_exclusion};
}

RetrievalConfig RunConfig::retrieval() const {
  return RetrievalConfig{retrieval_matches, retrieval_distractors, distractor_exclusion};
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ValidationError("unknown config key '" + key + "'");
  f->set(*this, key, value);
}

void RunConfig::validate() const {
  if (synth_min_scale > synth_max_scale) {
    throw ValidationError("config key 'synth_min_scale': exceeds synth_max_scale");
  }
  if (synth_sigma_min > synth_sigma_max) {
    throw ValidationError("config key 'synth_sigma_min': exceeds synth_sigma_max");
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : schema()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::istream& is, RunConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  base.validate();
  return base;
}

RunConfig read_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# resolved lpdesc run configuration\n";
  for (const auto& [k, f] : schema()) os << k << " = " << f.get(cfg) << "\n";
  return os.str();
}

void write_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config snapshot " + path.string());
  out << format_config(cfg);
}

}  // namespace lpdesc
