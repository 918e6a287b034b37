#pragma once
// Experiment commands. Every command writes its resolved config.ini next to
// its outputs; re-running from that file reproduces every CSV byte for byte.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "autoddpm/config.hpp"
#include "autoddpm/denoiser.hpp"
#include "autoddpm/metrics.hpp"
#include "autoddpm/synthdata.hpp"

namespace autoddpm {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitTrend = 3 };

// Method labels used in evaluation records.
std::string anoddpm_label(int t);  // "anoddpm@<t>"
inline constexpr const char* kAutoDdpm = "autoddpm";
inline constexpr const char* kAutoDdpmNoUncertainty = "autoddpm-no-uncertainty";
inline constexpr const char* kAutoDdpmNaiveStitch = "autoddpm-naive-stitch";

struct EvalSlice {
  int seed = 0;
  std::vector<const DatasetSample*> healthy, anomalous;
};

// Seed s takes the s-th disjoint block of healthy and anomalous test
// samples. Throws DataError when the test split is too small.
std::vector<EvalSlice> eval_slices(const ExperimentConfig& cfg, const Dataset& ds);

// Per-image evaluation seed for evaluation seed index s.
std::uint64_t eval_image_seed(std::uint64_t master, int s, const std::string& image_id);

using Logger = std::function<void(const std::string&)>;

// Runs the AnoDDPM sweep, AutoDDPM (with and without uncertainty gating)
// and the naive stitch of the same mask and initial reconstruction on every
// slice. Strata come from stratify() over all evaluated lesions. Records
// are ordered by (seed, image, method).
EvalReport evaluate(const RunConfig& cfg, const Dataset& ds, const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const Logger& log = {});

// Selects records of one stratum: "healthy", "lesion" (all anomalous),
// "small", "medium" or "large".
struct SeedStats {
  double mean = 0.0;  // mean over seeds of the per-seed means
  double sd = 0.0;    // sample standard deviation over seeds
  std::size_t n = 0;  // records contributing
  std::vector<double> per_seed;  // NaN for seeds without records
};
SeedStats seed_stats(const EvalReport& report, int seeds, const std::string& method, const std::string& stratum,
                     const std::string& metric);

struct TableRow {
  std::string method, level, metric;
  double value = 0.0;
  std::size_t n = 0;
  double dispersion = 0.0;
};

struct ExperimentTable {
  std::vector<TableRow> rows;
  std::string to_csv() const;
};

struct TrendCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::string checks_csv(const std::vector<TrendCheck>& checks);

ExperimentTable noise_paradox_table(const EvalReport& report, const RunConfig& cfg);
std::vector<TrendCheck> noise_paradox_checks(const EvalReport& report, const RunConfig& cfg);
ExperimentTable size_strata_table(const EvalReport& report, const RunConfig& cfg);
std::vector<TrendCheck> size_strata_checks(const EvalReport& report, const RunConfig& cfg);
ExperimentTable ablation_table(const EvalReport& report, const RunConfig& cfg);
std::vector<TrendCheck> ablation_checks(const EvalReport& report, const RunConfig& cfg);

struct CommandOptions {
  std::filesystem::path out;
  bool force = false;
  Logger log;
};

// Each returns an ExitCode. Data problems surface as DataError, usage
// problems as ConfigError; main maps them to exit codes.
int cmd_generate_data(const RunConfig& cfg, const CommandOptions& opt);
int cmd_train(const RunConfig& cfg, const CommandOptions& opt);
int cmd_detect(const RunConfig& cfg, const CommandOptions& opt, const std::filesystem::path& input,
               const std::optional<std::filesystem::path>& mask);
int cmd_noise_paradox(const RunConfig& cfg, const CommandOptions& opt);
int cmd_size_strata(const RunConfig& cfg, const CommandOptions& opt);
int cmd_ablate(const RunConfig& cfg, const CommandOptions& opt);

}  // namespace autoddpm
