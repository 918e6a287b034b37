// autoddpm: data generation, training, detection and the three toy-scale
// experiments. Exit codes: 0 ok, 1 usage, 2 data, 3 failed trend check.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "autoddpm/binio.hpp"
#include "autoddpm/experiments.hpp"
#include "autoddpm/simd.hpp"

namespace {

using namespace autoddpm;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool force = false;
  bool quiet = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (INI: [section] key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--force", c.force, "replace existing outputs");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set pipeline.t_mask=150")->take_all();
  cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

RunConfig resolve(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  if (c.workers) overrides.push_back("workers=" + std::to_string(*c.workers));
  return load_run_config(c.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(c.config), overrides);
}

CommandOptions options(const Common& c) {
  CommandOptions o;
  o.out = c.out;
  o.force = c.force;
  if (!c.quiet) {
    const auto start = std::chrono::steady_clock::now();
    o.log = [start](const std::string& msg) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
    };
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AutoDDPM / AnoDDPM anomaly detection on synthetic phantoms"};
  app.require_subcommand(1);
  bool show_config = false;
  Common c;
  std::string input, mask;

  auto* gen = app.add_subcommand("generate-data", "generate the phantom dataset (no-op when up to date)");
  auto* trn = app.add_subcommand("train", "train the denoiser, resuming an existing run in --out");
  auto* det = app.add_subcommand("detect", "run AutoDDPM on one image file");
  auto* np = app.add_subcommand("noise-paradox", "AnoDDPM noise sweep vs AutoDDPM on healthy SSIM");
  auto* ss = app.add_subcommand("size-strata", "max-Dice per lesion-size stratum");
  auto* ab = app.add_subcommand("ablate", "re-sampling and uncertainty ablations");
  auto* cfg_cmd = app.add_subcommand("config", "print the resolved configuration");
  for (auto* cmd : {gen, trn, det, np, ss, ab, cfg_cmd}) add_common(cmd, c);
  det->add_option("--input", input, "image file (.adim)")->required();
  det->add_option("--mask", mask, "use this mask (.admk) instead of the estimated one");
  cfg_cmd->callback([&] { show_config = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = resolve(c);
    const CommandOptions opt = options(c);
    if (show_config) {
      std::cout << cfg.to_ini();
      return kExitOk;
    }
    if (opt.log) opt.log(std::string("simd: ") + std::string(simd::isa_name(simd::active_isa())));
    if (*gen) return cmd_generate_data(cfg, opt);
    if (*trn) return cmd_train(cfg, opt);
    if (*det) {
      return cmd_detect(cfg, opt, input, mask.empty() ? std::nullopt : std::optional<std::filesystem::path>(mask));
    }
    if (*np) return cmd_noise_paradox(cfg, opt);
    if (*ss) return cmd_size_strata(cfg, opt);
    if (*ab) return cmd_ablate(cfg, opt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
