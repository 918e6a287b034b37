#include "autoddpm/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "autoddpm/binio.hpp"

namespace autoddpm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string canonical_key(const std::string& key) {
  if (key.rfind("run.", 0) == 0) return key.substr(4);
  return key;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto r = std::from_chars(first, last, out);
  if (r.ec != std::errc() || r.ptr != last || value.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string band_str(const Band& b) { return fmt_double(b.lo) + "," + fmt_double(b.hi); }

Band parse_band(const std::string& key, const std::string& value) {
  const auto comma = value.find(',');
  if (comma == std::string::npos) throw ConfigError("config key '" + key + "': expected 'lo,hi'");
  return Band{parse_number<double>(key, trim(value.substr(0, comma))),
              parse_number<double>(key, trim(value.substr(comma + 1)))};
}

std::string range_str(const std::array<int, 2>& r) { return std::to_string(r[0]) + "," + std::to_string(r[1]); }

std::array<int, 2> parse_range(const std::string& key, const std::string& value) {
  const auto v = parse_int_list(key, value);
  if (v.size() != 2) throw ConfigError("config key '" + key + "': expected 'lo,hi'");
  return {v[0], v[1]};
}

// One binding per config key: reads from and writes to a RunConfig field.
struct Binding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <class T>
Binding number(std::string key, T RunConfig::*outer) {
  return {key, [key, outer](RunConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); },
          [outer](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*outer);
            else return std::to_string(c.*outer);
          }};
}

template <class S, class T>
Binding number(std::string key, S RunConfig::*outer, T S::*inner) {
  return {key, [key, outer, inner](RunConfig& c, const std::string& v) { (c.*outer).*inner = parse_number<T>(key, v); },
          [outer, inner](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double((c.*outer).*inner);
            else return std::to_string((c.*outer).*inner);
          }};
}

template <class S, class M, class T>
Binding nested_number(std::string key, S RunConfig::*outer, M S::*mid, T M::*inner) {
  return {key,
          [key, outer, mid, inner](RunConfig& c, const std::string& v) {
            ((c.*outer).*mid).*inner = parse_number<T>(key, v);
          },
          [outer, mid, inner](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(((c.*outer).*mid).*inner);
            else return std::to_string(((c.*outer).*mid).*inner);
          }};
}

template <class M>
Binding band(std::string key, M DatasetSpec::*mid, Band M::*inner) {
  return {key, [key, mid, inner](RunConfig& c, const std::string& v) { (c.data.*mid).*inner = parse_band(key, v); },
          [mid, inner](const RunConfig& c) { return band_str((c.data.*mid).*inner); }};
}

Binding path(std::string key, std::filesystem::path RunConfig::*field) {
  return {key, [field](RunConfig& c, const std::string& v) { c.*field = v; },
          [field](const RunConfig& c) { return (c.*field).string(); }};
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = [] {
    std::vector<Binding> v;
    v.push_back(number("seed", &RunConfig::seed));
    v.push_back(number("workers", &RunConfig::workers));
    v.push_back(path("data_dir", &RunConfig::data_dir));
    v.push_back(path("checkpoint", &RunConfig::checkpoint));
    v.push_back(path("cache_dir", &RunConfig::cache_dir));

    v.push_back(number("schedule.t_max", &RunConfig::schedule, &ScheduleConfig::t_max));
    v.push_back(number("schedule.beta_1", &RunConfig::schedule, &ScheduleConfig::beta_1));
    v.push_back(number("schedule.beta_T", &RunConfig::schedule, &ScheduleConfig::beta_T));

    v.push_back(number("data.seed", &RunConfig::data, &DatasetSpec::seed));
    v.push_back(number("data.n_train", &RunConfig::data, &DatasetSpec::n_train));
    v.push_back(number("data.n_test_healthy", &RunConfig::data, &DatasetSpec::n_test_healthy));
    v.push_back(number("data.n_test_anomalous", &RunConfig::data, &DatasetSpec::n_test_anomalous));
    v.push_back(number("data.hyper_fraction", &RunConfig::data, &DatasetSpec::hyper_fraction));
    v.push_back(nested_number("data.height", &RunConfig::data, &DatasetSpec::phantom, &PhantomParams::height));
    v.push_back(nested_number("data.width", &RunConfig::data, &DatasetSpec::phantom, &PhantomParams::width));
    v.push_back(band("data.head_rows", &DatasetSpec::phantom, &PhantomParams::head_rows));
    v.push_back(band("data.head_cols", &DatasetSpec::phantom, &PhantomParams::head_cols));
    v.push_back(band("data.skull_thickness", &DatasetSpec::phantom, &PhantomParams::skull_thickness));
    v.push_back(band("data.skull_level", &DatasetSpec::phantom, &PhantomParams::skull_level));
    v.push_back(band("data.tissue_level", &DatasetSpec::phantom, &PhantomParams::tissue_level));
    v.push_back(nested_number("data.min_structures", &RunConfig::data, &DatasetSpec::phantom,
                              &PhantomParams::min_structures));
    v.push_back(nested_number("data.max_structures", &RunConfig::data, &DatasetSpec::phantom,
                              &PhantomParams::max_structures));
    v.push_back(band("data.dark_level", &DatasetSpec::phantom, &PhantomParams::dark_level));
    v.push_back(band("data.bright_level", &DatasetSpec::phantom, &PhantomParams::bright_level));
    v.push_back(nested_number("data.deformation", &RunConfig::data, &DatasetSpec::phantom, &PhantomParams::deformation));
    v.push_back(nested_number("data.texture_sigma", &RunConfig::data, &DatasetSpec::phantom,
                              &PhantomParams::texture_sigma));
    v.push_back(nested_number("data.background", &RunConfig::data, &DatasetSpec::phantom, &PhantomParams::background));
    v.push_back(band("data.foreground_fraction", &DatasetSpec::phantom, &PhantomParams::foreground_fraction));
    for (const auto& [name, member] : {std::pair{"small", &AnomalySpec::small}, std::pair{"medium", &AnomalySpec::medium},
                                       std::pair{"large", &AnomalySpec::large}}) {
      const std::string key = std::string("data.lesion_") + name;
      v.push_back({key, [key, member](RunConfig& c, const std::string& s) { c.data.anomaly.*member = parse_range(key, s); },
                   [member](const RunConfig& c) { return range_str(c.data.anomaly.*member); }});
    }
    v.push_back(nested_number("data.irregularity", &RunConfig::data, &DatasetSpec::anomaly, &AnomalySpec::irregularity));
    v.push_back(band("data.lesion_strength", &DatasetSpec::anomaly, &AnomalySpec::strength));
    v.push_back(nested_number("data.lesion_margin", &RunConfig::data, &DatasetSpec::anomaly, &AnomalySpec::margin));

    v.push_back(number("model.in_channels", &RunConfig::model, &UNetConfig::in_channels));
    v.push_back(number("model.base_channels", &RunConfig::model, &UNetConfig::base_channels));
    v.push_back({"model.channel_mult",
                 [](RunConfig& c, const std::string& s) { c.model.channel_mult = parse_int_list("model.channel_mult", s); },
                 [](const RunConfig& c) { return join(c.model.channel_mult); }});
    v.push_back(number("model.blocks_per_level", &RunConfig::model, &UNetConfig::blocks_per_level));
    v.push_back(number("model.temb_dim", &RunConfig::model, &UNetConfig::temb_dim));
    v.push_back(number("model.norm_groups", &RunConfig::model, &UNetConfig::norm_groups));

    v.push_back(number("train.seed", &RunConfig::train, &TrainConfig::seed));
    v.push_back(number("train.epochs", &RunConfig::train, &TrainConfig::epochs));
    v.push_back(number("train.batch_size", &RunConfig::train, &TrainConfig::batch_size));
    v.push_back(number("train.learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    v.push_back(number("train.beta1", &RunConfig::train, &TrainConfig::beta1));
    v.push_back(number("train.beta2", &RunConfig::train, &TrainConfig::beta2));
    v.push_back(number("train.adam_eps", &RunConfig::train, &TrainConfig::adam_eps));
    v.push_back(number("train.val_fraction", &RunConfig::train, &TrainConfig::val_fraction));

    v.push_back(number("pipeline.t_mask", &RunConfig::pipeline, &PipelineConfig::t_mask));
    v.push_back(number("pipeline.t_stitch", &RunConfig::pipeline, &PipelineConfig::t_stitch));
    v.push_back(number("pipeline.n_resample", &RunConfig::pipeline, &PipelineConfig::n_resample));
    v.push_back(number("pipeline.dilation_kernel", &RunConfig::pipeline, &PipelineConfig::dilation_kernel));
    v.push_back(number("pipeline.binarize_quantile", &RunConfig::pipeline, &PipelineConfig::binarize_quantile));
    v.push_back(number("pipeline.norm_percentile", &RunConfig::pipeline, &PipelineConfig::norm_percentile));
    v.push_back({"pipeline.use_uncertainty",
                 [](RunConfig& c, const std::string& s) {
                   c.pipeline.use_uncertainty = parse_bool("pipeline.use_uncertainty", s);
                 },
                 [](const RunConfig& c) { return std::string(c.pipeline.use_uncertainty ? "true" : "false"); }});

    v.push_back({"experiment.noise_levels",
                 [](RunConfig& c, const std::string& s) {
                   c.experiment.noise_levels = parse_int_list("experiment.noise_levels", s);
                 },
                 [](const RunConfig& c) { return join(c.experiment.noise_levels); }});
    v.push_back(number("experiment.seeds", &RunConfig::experiment, &ExperimentConfig::seeds));
    v.push_back(number("experiment.healthy_per_seed", &RunConfig::experiment, &ExperimentConfig::healthy_per_seed));
    v.push_back(number("experiment.anomalous_per_seed", &RunConfig::experiment, &ExperimentConfig::anomalous_per_seed));
    v.push_back(number("experiment.panels", &RunConfig::experiment, &ExperimentConfig::panels));
    v.push_back(number("experiment.max_inversions", &RunConfig::experiment, &ExperimentConfig::max_inversions));
    v.push_back(number("experiment.min_ssim_gain", &RunConfig::experiment, &ExperimentConfig::min_ssim_gain));
    v.push_back(number("experiment.min_boundary_win_rate", &RunConfig::experiment,
                       &ExperimentConfig::min_boundary_win_rate));
    v.push_back(number("experiment.min_boundary_cases", &RunConfig::experiment, &ExperimentConfig::min_boundary_cases));
    return v;
  }();
  return b;
}

constexpr std::uint64_t kDataSeedKey = 1;
constexpr std::uint64_t kTrainSeedKey = 2;

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      if (section == "run") section.clear();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    kv.values_[canonical_key(section.empty() ? key : section + "." + key)] = trim(line.substr(eq + 1));
  }
  return kv;
}

void KeyValueConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected section.key=value");
  values_[canonical_key(trim(assignment.substr(0, eq)))] = trim(assignment.substr(eq + 1));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(canonical_key(key));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

RunConfig RunConfig::from_kv(const KeyValueConfig& kv) {
  RunConfig c;
  std::set<std::string> known;
  for (const auto& b : bindings()) known.insert(b.key);
  for (const auto& [key, value] : kv.values()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  for (const auto& b : bindings()) {
    if (const auto v = kv.get(b.key)) b.read(c, *v);
  }
  if (!kv.get("data.seed")) c.data.seed = mix_seed(c.seed, {kDataSeedKey});
  if (!kv.get("train.seed")) c.train.seed = mix_seed(c.seed, {kTrainSeedKey});
  c.validate();
  return c;
}

KeyValueConfig RunConfig::to_kv() const {
  KeyValueConfig kv;
  for (const auto& b : bindings()) kv.set(b.key, b.write(*this));
  return kv;
}

std::string RunConfig::to_ini() const {
  std::string out = "# resolved configuration\n";
  std::string current;
  for (const auto& b : bindings()) {
    const auto dot = b.key.find('.');
    const std::string section = dot == std::string::npos ? "" : b.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? b.key : b.key.substr(dot + 1);
    if (section != current) {
      out += "\n[" + section + "]\n";
      current = section;
    }
    out += name + " = " + b.write(*this) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  try {
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (schedule.t_max < 1 || !(schedule.beta_1 > 0.0 && schedule.beta_1 <= schedule.beta_T && schedule.beta_T < 1.0)) {
      throw std::invalid_argument("schedule: need t_max >= 1 and 0 < beta_1 <= beta_T < 1");
    }
    data.validate();
    model.validate();
    train.validate();
    pipeline.validate(schedule.t_max);
    const int div = model.size_divisor();
    if (data.phantom.height % div != 0 || data.phantom.width % div != 0) {
      throw std::invalid_argument("data size must be divisible by " + std::to_string(div) + " for this model");
    }
    if (experiment.noise_levels.empty()) throw std::invalid_argument("experiment.noise_levels is empty");
    for (const int t : experiment.noise_levels) {
      if (t < 1 || t > schedule.t_max) throw std::invalid_argument("experiment.noise_levels must lie in [1, t_max]");
    }
    for (std::size_t i = 1; i < experiment.noise_levels.size(); ++i) {
      if (experiment.noise_levels[i] <= experiment.noise_levels[i - 1]) {
        throw std::invalid_argument("experiment.noise_levels must be strictly increasing");
      }
    }
    if (experiment.seeds < 1 || experiment.healthy_per_seed < 0 || experiment.anomalous_per_seed < 0 ||
        experiment.panels < 0 || experiment.max_inversions < 0 || experiment.min_boundary_cases < 0) {
      throw std::invalid_argument("experiment counts must be non-negative (seeds >= 1)");
    }
    if (!(experiment.min_boundary_win_rate >= 0.0 && experiment.min_boundary_win_rate <= 1.0)) {
      throw std::invalid_argument("experiment.min_boundary_win_rate must lie in [0, 1]");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

NoiseSchedule RunConfig::make_noise_schedule() const {
  return make_schedule(schedule.t_max, schedule.beta_1, schedule.beta_T);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (path) {
    std::string text;
    try {
      text = read_text_file(*path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config file " + path->string() + ": " + e.what());
    }
    kv = KeyValueConfig::parse(text, path->string());
  }
  for (const auto& o : overrides) kv.set_override(o);
  return RunConfig::from_kv(kv);
}

}  // namespace autoddpm
