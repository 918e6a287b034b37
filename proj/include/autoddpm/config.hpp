#pragma once
// Run configuration. The file format is INI-like:
//
//   # comment
//   seed = 0
//   [pipeline]
//   t_mask = 200
//
// Keys before the first section header belong to [run]. Every key is
// addressed as "section.key" (run keys also bare), which is also the form
// of command-line overrides: --set pipeline.t_mask=150. Unknown keys are
// errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "autoddpm/pipeline.hpp"
#include "autoddpm/synthdata.hpp"
#include "autoddpm/train.hpp"
#include "autoddpm/unet.hpp"

namespace autoddpm {

// Invalid configuration or command line (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  // "section.key=value"
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct ScheduleConfig {
  int t_max = 1000;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
};

struct ExperimentConfig {
  std::vector<int> noise_levels{50, 100, 150, 200, 250, 300};
  int seeds = 5;
  // Disjoint slices of the test split per evaluation seed.
  int healthy_per_seed = 4;
  int anomalous_per_seed = 12;
  // Images of seed 0 rendered as ablation panels.
  int panels = 3;
  // Bounded inversion count for the SSIM trend.
  int max_inversions = 1;
  double min_ssim_gain = 0.05;
  double min_boundary_win_rate = 0.80;
  int min_boundary_cases = 50;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  ScheduleConfig schedule;
  DatasetSpec data;
  UNetConfig model;
  TrainConfig train;
  PipelineConfig pipeline;
  ExperimentConfig experiment;
  std::filesystem::path data_dir = "runs/data";
  std::filesystem::path checkpoint = "runs/train/model.ckpt";
  // Shared evaluation cache; empty disables it.
  std::filesystem::path cache_dir = "runs/cache";

  // Throws ConfigError.
  static RunConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
  // Canonical text form; from_kv(parse(to_ini())) reproduces this config.
  std::string to_ini() const;
  void validate() const;

  NoiseSchedule make_noise_schedule() const;
};

// Defaults, then the file (if any), then overrides in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

}  // namespace autoddpm
