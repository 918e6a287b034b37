#include "autoddpm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

#include "autoddpm/binio.hpp"
#include "autoddpm/checkpoint.hpp"
#include "autoddpm/image_io.hpp"
#include "autoddpm/parallel.hpp"
#include "autoddpm/pipeline.hpp"
#include "autoddpm/plot.hpp"

namespace autoddpm {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalKey = 0x4556414cULL;
constexpr std::uint64_t kInitKey = 0x494e4954ULL;
constexpr std::size_t kUnitSize = 8;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

double metric_of(const EvalRecord& r, const std::string& metric) {
  if (metric == "mse") return r.mse;
  if (metric == "ssim") return r.ssim;
  if (metric == "perceptual") return r.perceptual;
  if (metric == "auprc") return r.auprc;
  if (metric == "max_dice") return r.max_dice;
  if (metric == "boundary") return r.boundary;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

bool in_stratum(const EvalRecord& r, const std::string& stratum) {
  if (stratum == "any") return true;
  if (stratum == "healthy") return r.stratum == Stratum::none;
  if (stratum == "lesion") return r.stratum != Stratum::none;
  return stratum_name(r.stratum) == stratum;
}

bool has_border(const BinaryMask& m) {
  const std::size_t n = popcount(m);
  return n > 0 && n < m.size();
}

EvalRecord make_record(int seed, const DatasetSample& s, const std::string& method, Stratum stratum, const Image& recon,
                       const Heatmap& map, const BinaryMask* stitch_mask) {
  EvalRecord r;
  r.seed = seed;
  r.image_id = s.id;
  r.method = method;
  r.stratum = stratum;
  r.lesion_pixels = s.lesion_pixels;
  r.mse = mse(s.image, recon);
  r.ssim = ssim(s.image, recon);
  r.perceptual = default_perceptual().scalar(recon, s.image);
  r.auprc = s.mask ? auprc(map, *s.mask) : kNaN;
  r.max_dice = s.mask ? max_dice(map, *s.mask) : kNaN;
  r.boundary = stitch_mask && has_border(*stitch_mask) ? boundary_discontinuity(recon, *stitch_mask) : kNaN;
  return r;
}

struct Unit {
  int seed = 0;
  std::vector<const DatasetSample*> samples;
};

std::vector<EvalRecord> evaluate_unit(const RunConfig& cfg, const Unit& unit, const std::map<std::string, Stratum>& strata,
                                      const Denoiser& denoiser, const NoiseSchedule& schedule) {
  const std::size_t n = unit.samples.size();
  std::vector<Image> xs;
  std::vector<std::uint64_t> seeds;
  std::vector<Stratum> st;
  for (const auto* s : unit.samples) {
    xs.push_back(s->image);
    seeds.push_back(eval_image_seed(cfg.seed, unit.seed, s->id));
    const auto it = strata.find(s->id);
    st.push_back(it == strata.end() ? Stratum::none : it->second);
  }
  std::vector<std::vector<EvalRecord>> per_image(n);
  const PerceptualDistance& lp = default_perceptual();
  const double p = cfg.pipeline.norm_percentile;

  std::vector<Image> at_mask;
  for (const int t : cfg.experiment.noise_levels) {
    std::vector<RandomSource> rngs;
    for (const auto sd : seeds) rngs.emplace_back(stage_seed(sd, 1, t));
    auto rec = anoddpm_reconstruct_batch(xs, denoiser, schedule, t, rngs);
    for (std::size_t i = 0; i < n; ++i) {
      const Heatmap map = anomaly_heatmap(xs[i], rec[i], lp, p);
      per_image[i].push_back(make_record(unit.seed, *unit.samples[i], anoddpm_label(t), st[i], rec[i], map, nullptr));
    }
    if (t == cfg.pipeline.t_mask) at_mask = std::move(rec);
  }

  PipelineConfig full = cfg.pipeline;
  full.use_uncertainty = true;
  std::vector<DetectOptions> opts(n);
  for (std::size_t i = 0; i < n && !at_mask.empty(); ++i) opts[i].initial_reconstruction = at_mask[i];
  const auto res = detect_batch(xs, denoiser, schedule, full, seeds, opts);


  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = *unit.samples[i];
    const Heatmap ungated =
        final_anomaly_map(xs[i], res[i].ph_reconstruction, res[i].initial_heatmap, lp, false, p);
    per_image[i].push_back(
        make_record(unit.seed, s, kAutoDdpm, st[i], res[i].ph_reconstruction, res[i].final_map, &res[i].mask));
    per_image[i].push_back(
        make_record(unit.seed, s, kAutoDdpmNoUncertainty, st[i], res[i].ph_reconstruction, ungated, &res[i].mask));
    const Image naive = naive_stitch(xs[i], res[i].initial_reconstruction, res[i].mask);
    const Heatmap naive_map = final_anomaly_map(xs[i], naive, res[i].initial_heatmap, lp, true, p);
    per_image[i].push_back(make_record(unit.seed, s, kAutoDdpmNaiveStitch, st[i], naive, naive_map, &res[i].mask));
    for (auto& r : per_image[i]) out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> sorted_methods(const RunConfig& cfg) {
  std::vector<std::string> m;
  for (const int t : cfg.experiment.noise_levels) m.push_back(anoddpm_label(t));
  m.push_back(kAutoDdpm);
  return m;
}

void add_row(ExperimentTable& table, const EvalReport& report, const RunConfig& cfg, const std::string& method,
             const std::string& row_method, const std::string& level, const std::string& stratum,
             const std::string& metric) {
  const SeedStats s = seed_stats(report, cfg.experiment.seeds, method, stratum, metric);
  table.rows.push_back({row_method, level, metric + (stratum == "any" ? "" : "/" + stratum), s.mean, s.n, s.sd});
}

// ---- output helpers ----

void write_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "config.ini", cfg.to_ini());
}

std::string cache_key(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data_dir) {
  std::string key;
  const auto ck = read_file(checkpoint);
  key += "checkpoint=" + hex(hash_string(std::string(ck.begin(), ck.end()))) + "\n";
  key += "dataset=" + hex(hash_string(read_text_file(data_dir / "manifest.json"))) + "\n";
  static const char* kPrefixes[] = {"schedule.", "pipeline.t_", "pipeline.n_", "pipeline.dilation", "pipeline.binarize",
                                    "pipeline.norm", "experiment.noise_levels", "experiment.seeds",
                                    "experiment.healthy_per_seed", "experiment.anomalous_per_seed", "seed"};
  const KeyValueConfig kv = cfg.to_kv();
  for (const auto& [k, v] : kv.values()) {
    for (const char* p : kPrefixes) {
      if (k.rfind(p, 0) == 0 && (std::string(p) != "seed" || k == "seed")) {
        key += k + "=" + v + "\n";
        break;
      }
    }
  }
  return key;
}

struct Loaded {
  Dataset ds;
  UNetParams<float> params;
};

Loaded load_inputs(const RunConfig& cfg) {
  Loaded l;
  l.ds = dataset_load(cfg.data_dir);
  if (!fs::exists(cfg.checkpoint)) throw DataError(cfg.checkpoint.string() + ": checkpoint not found (run train first)");
  l.params = checkpoint_load(cfg.checkpoint, cfg.model);
  return l;
}

// Records round-trip through their CSV text, so tables computed from a fresh
// evaluation and from a cached one are identical.
EvalReport cached_evaluation(const RunConfig& cfg, const CommandOptions& opt, Loaded& in) {
  const NoiseSchedule schedule = cfg.make_noise_schedule();
  std::string key;
  fs::path cache_file;
  if (!cfg.cache_dir.empty()) {
    key = cache_key(cfg, cfg.checkpoint, cfg.data_dir);
    cache_file = cfg.cache_dir / ("eval-" + hex(hash_string(key)) + ".csv");
    if (fs::exists(cache_file) && fs::exists(fs::path(cache_file).replace_extension(".key")) &&
        read_text_file(fs::path(cache_file).replace_extension(".key")) == key) {
      say(opt.log, "using cached evaluation " + cache_file.string());
      return EvalReport::from_csv(read_text_file(cache_file));
    }
  }
  const UNetDenoiser denoiser(in.params, cfg.schedule.t_max);
  const EvalReport report = evaluate(cfg, in.ds, denoiser, schedule, opt.log);
  const std::string csv = report.to_csv();
  if (!cache_file.empty()) {
    fs::create_directories(cfg.cache_dir);
    write_text_file(cache_file, csv);
    write_text_file(fs::path(cache_file).replace_extension(".key"), key);
  }
  return EvalReport::from_csv(csv);
}

int finish_experiment(const fs::path& out, const EvalReport& report, const ExperimentTable& table,
                      const std::vector<TrendCheck>& checks, const std::string& reference_csv, const Logger& log) {
  write_text_file(out / "records.csv", report.to_csv());
  write_text_file(out / "table.csv", table.to_csv());
  write_text_file(out / "checks.csv", checks_csv(checks));
  write_text_file(out / "reference.csv", reference_csv);
  bool ok = true;
  for (const auto& c : checks) {
    say(log, std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail);
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitTrend;
}

fs::path out_dir(const CommandOptions& opt, const char* fallback) {
  return opt.out.empty() ? fs::path("runs") / fallback : opt.out;
}

std::vector<double> xs_of(const RunConfig& cfg) {
  return {cfg.experiment.noise_levels.begin(), cfg.experiment.noise_levels.end()};
}

}  // namespace

std::string anoddpm_label(int t) { return "anoddpm@" + std::to_string(t); }

std::uint64_t eval_image_seed(std::uint64_t master, int s, const std::string& image_id) {
  return mix_seed(master, {kEvalKey, static_cast<std::uint64_t>(s), hash_string(image_id)});
}

std::vector<EvalSlice> eval_slices(const ExperimentConfig& cfg, const Dataset& ds) {
  const auto healthy = ds.select(Split::test, false);
  const auto anomalous = ds.select(Split::test, true);
  const auto need_h = static_cast<std::size_t>(cfg.seeds) * static_cast<std::size_t>(cfg.healthy_per_seed);
  const auto need_a = static_cast<std::size_t>(cfg.seeds) * static_cast<std::size_t>(cfg.anomalous_per_seed);
  if (healthy.size() < need_h || anomalous.size() < need_a) {
    throw DataError("test split too small: need " + std::to_string(need_h) + " healthy and " + std::to_string(need_a) +
                    " anomalous samples, dataset has " + std::to_string(healthy.size()) + " and " +
                    std::to_string(anomalous.size()));
  }
  std::vector<EvalSlice> out(static_cast<std::size_t>(cfg.seeds));
  for (int s = 0; s < cfg.seeds; ++s) {
    auto& sl = out[static_cast<std::size_t>(s)];
    sl.seed = s;
    for (int i = 0; i < cfg.healthy_per_seed; ++i) sl.healthy.push_back(healthy[s * cfg.healthy_per_seed + i]);
    for (int i = 0; i < cfg.anomalous_per_seed; ++i) sl.anomalous.push_back(anomalous[s * cfg.anomalous_per_seed + i]);
  }
  return out;
}

EvalReport evaluate(const RunConfig& cfg, const Dataset& ds, const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const Logger& log) {
  cfg.validate();
  const auto slices = eval_slices(cfg.experiment, ds);
  std::map<std::string, Stratum> strata;
  {
    std::vector<const DatasetSample*> lesions;
    std::vector<int> sizes;
    for (const auto& sl : slices) {
      for (const auto* s : sl.anomalous) {
        lesions.push_back(s);
        sizes.push_back(s->lesion_pixels);
      }
    }
    if (!sizes.empty()) {
      const auto st = stratify(sizes);
      for (std::size_t i = 0; i < lesions.size(); ++i) strata[lesions[i]->id] = st[i];
    }
  }
  std::vector<Unit> units;
  for (const auto& sl : slices) {
    std::vector<const DatasetSample*> all = sl.healthy;
    all.insert(all.end(), sl.anomalous.begin(), sl.anomalous.end());
    for (std::size_t i = 0; i < all.size(); i += kUnitSize) {
      Unit u;
      u.seed = sl.seed;
      u.samples.assign(all.begin() + static_cast<std::ptrdiff_t>(i),
                       all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + kUnitSize)));
      units.push_back(std::move(u));
    }
  }
  std::vector<std::vector<EvalRecord>> results(units.size());
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;
  parallel_for(units.size(), cfg.workers, [&](std::size_t u) {
    results[u] = evaluate_unit(cfg, units[u], strata, denoiser, schedule);
    const std::size_t d = ++done;
    std::lock_guard lock(log_mutex);
    say(log, "evaluated " + std::to_string(d) + "/" + std::to_string(units.size()) + " image batches");
  });
  EvalReport report;
  for (auto& r : results) {
    for (auto& rec : r) report.records.push_back(std::move(rec));
  }
  return report;
}

SeedStats seed_stats(const EvalReport& report, int seeds, const std::string& method, const std::string& stratum,
                     const std::string& metric) {
  std::vector<std::vector<std::pair<std::string, double>>> by_seed(static_cast<std::size_t>(seeds));
  SeedStats out;
  for (const auto& r : report.records) {
    if (r.method != method || !in_stratum(r, stratum) || r.seed < 0 || r.seed >= seeds) continue;
    const double v = metric_of(r, metric);
    if (!std::isfinite(v)) continue;
    by_seed[static_cast<std::size_t>(r.seed)].emplace_back(r.image_id, v);
    ++out.n;
  }
  std::vector<double> finite;
  for (auto& vals : by_seed) {
    if (vals.empty()) {
      out.per_seed.push_back(kNaN);
      continue;
    }
    std::sort(vals.begin(), vals.end());
    double sum = 0.0;
    for (const auto& [id, v] : vals) sum += v;
    out.per_seed.push_back(sum / static_cast<double>(vals.size()));
    finite.push_back(out.per_seed.back());
  }
  if (finite.empty()) {
    out.mean = out.sd = kNaN;
    return out;
  }
  double sum = 0.0;
  for (const double v : finite) sum += v;
  out.mean = sum / static_cast<double>(finite.size());
  double ss = 0.0;
  for (const double v : finite) ss += (v - out.mean) * (v - out.mean);
  out.sd = finite.size() > 1 ? std::sqrt(ss / static_cast<double>(finite.size() - 1)) : 0.0;
  return out;
}

std::string ExperimentTable::to_csv() const {
  std::string s = "method,level,metric,value,n,dispersion\n";
  for (const auto& r : rows) {
    s += r.method + "," + r.level + "," + r.metric + "," + fmt(r.value) + "," + std::to_string(r.n) + "," +
         fmt(r.dispersion) + "\n";
  }
  return s;
}

std::string checks_csv(const std::vector<TrendCheck>& checks) {
  std::string s = "check,passed,detail\n";
  for (const auto& c : checks) s += c.name + "," + (c.passed ? "true" : "false") + ",\"" + c.detail + "\"\n";
  return s;
}

ExperimentTable noise_paradox_table(const EvalReport& report, const RunConfig& cfg) {
  ExperimentTable t;
  for (const int level : cfg.experiment.noise_levels) {
    for (const auto& [stratum, metric] : {std::pair{"healthy", "ssim"}, {"lesion", "auprc"}, {"lesion", "max_dice"}}) {
      add_row(t, report, cfg, anoddpm_label(level), "anoddpm", std::to_string(level), stratum, metric);
    }
  }
  for (const auto& [stratum, metric] : {std::pair{"healthy", "ssim"}, {"lesion", "auprc"}, {"lesion", "max_dice"}}) {
    add_row(t, report, cfg, kAutoDdpm, kAutoDdpm, "adaptive", stratum, metric);
  }
  return t;
}

std::vector<TrendCheck> noise_paradox_checks(const EvalReport& report, const RunConfig& cfg) {
  std::vector<TrendCheck> checks;
  const auto& levels = cfg.experiment.noise_levels;
  std::vector<SeedStats> s;
  for (const int t : levels) s.push_back(seed_stats(report, cfg.experiment.seeds, anoddpm_label(t), "healthy", "ssim"));
  int inversions = 0;
  bool within = true;
  std::string detail = "ssim by t:";
  for (std::size_t i = 0; i < s.size(); ++i) {
    detail += " " + std::to_string(levels[i]) + "=" + fmt(s[i].mean) + "+-" + fmt(s[i].sd);
    if (i > 0 && s[i].mean > s[i - 1].mean) {
      ++inversions;
      within = within && s[i].mean - s[i - 1].mean <= std::max(s[i].sd, s[i - 1].sd);
    }
  }
  detail += "; inversions=" + std::to_string(inversions) + (within ? " (within 1 sd)" : " (beyond 1 sd)");
  const bool finite = std::all_of(s.begin(), s.end(), [](const SeedStats& x) { return std::isfinite(x.mean); });
  checks.push_back({"anoddpm-ssim-nonincreasing", finite && inversions <= cfg.experiment.max_inversions && within, detail});

  const SeedStats autod = seed_stats(report, cfg.experiment.seeds, kAutoDdpm, "healthy", "ssim");
  const int t_ref = cfg.pipeline.t_mask;
  const bool have_ref = std::find(levels.begin(), levels.end(), t_ref) != levels.end();
  const SeedStats ref = seed_stats(report, cfg.experiment.seeds, anoddpm_label(t_ref), "healthy", "ssim");
  const double gain = autod.mean - ref.mean;
  checks.push_back({"autoddpm-ssim-gain",
                    have_ref && std::isfinite(gain) && gain >= cfg.experiment.min_ssim_gain,
                    have_ref ? "autoddpm " + fmt(autod.mean) + " vs anoddpm@" + std::to_string(t_ref) + " " +
                                   fmt(ref.mean) + ", gain " + fmt(gain) + " (need >= " +
                                   fmt(cfg.experiment.min_ssim_gain) + ")"
                             : "t_mask " + std::to_string(t_ref) + " is not in the noise sweep"});
  return checks;
}

ExperimentTable size_strata_table(const EvalReport& report, const RunConfig& cfg) {
  ExperimentTable t;
  for (const auto& m : sorted_methods(cfg)) {
    const bool ano = m != kAutoDdpm;
    const std::string level = ano ? m.substr(m.find('@') + 1) : "adaptive";
    for (const char* stratum : {"small", "medium", "large", "lesion"}) {
      add_row(t, report, cfg, m, ano ? "anoddpm" : kAutoDdpm, level, stratum, "max_dice");
    }
  }
  return t;
}

std::vector<TrendCheck> size_strata_checks(const EvalReport& report, const RunConfig& cfg) {
  std::vector<TrendCheck> checks;
  const int seeds = cfg.experiment.seeds;
  const auto& levels = cfg.experiment.noise_levels;
  int wins = 0;
  std::string detail;
  for (const char* stratum : {"small", "medium", "large"}) {
    double best = -std::numeric_limits<double>::infinity();
    int best_t = 0;
    for (const int t : levels) {
      const double v = seed_stats(report, seeds, anoddpm_label(t), stratum, "max_dice").mean;
      if (std::isfinite(v) && v > best) best = v, best_t = t;
    }
    const double a = seed_stats(report, seeds, kAutoDdpm, stratum, "max_dice").mean;
    const bool win = std::isfinite(a) && a >= best;
    wins += win;
    detail += std::string(detail.empty() ? "" : "; ") + stratum + ": autoddpm " + fmt(a) + " vs anoddpm@" +
              std::to_string(best_t) + " " + fmt(best);
  }
  checks.push_back({"autoddpm-beats-best-anoddpm", wins >= 2, std::to_string(wins) + "/3 strata; " + detail});

  // Per seed, the t with the highest mean max-Dice (the smallest t on ties).
  const auto argmax = [&](const char* stratum) {
    std::vector<int> best(static_cast<std::size_t>(seeds), 0);
    std::vector<double> val(static_cast<std::size_t>(seeds), -std::numeric_limits<double>::infinity());
    for (const int t : levels) {
      const auto s = seed_stats(report, seeds, anoddpm_label(t), stratum, "max_dice");
      for (int k = 0; k < seeds; ++k) {
        const double v = s.per_seed[static_cast<std::size_t>(k)];
        if (std::isfinite(v) && v > val[static_cast<std::size_t>(k)]) {
          val[static_cast<std::size_t>(k)] = v;
          best[static_cast<std::size_t>(k)] = t;
        }
      }
    }
    return best;
  };
  const auto small = argmax("small"), large = argmax("large");
  int differ = 0;
  std::string per_seed;
  for (int k = 0; k < seeds; ++k) {
    const auto i = static_cast<std::size_t>(k);
    differ += small[i] != 0 && large[i] != 0 && small[i] != large[i];
    per_seed += " seed" + std::to_string(k) + "=" + std::to_string(small[i]) + "/" + std::to_string(large[i]);
  }
  const int need = (3 * seeds + 4) / 5;
  checks.push_back({"optimal-t-differs-small-large", differ >= need,
                    std::to_string(differ) + "/" + std::to_string(seeds) + " seeds (need " + std::to_string(need) +
                        "); best t small/large:" + per_seed});
  return checks;
}

ExperimentTable ablation_table(const EvalReport& report, const RunConfig& cfg) {
  ExperimentTable t;
  for (const char* m : {kAutoDdpm, kAutoDdpmNoUncertainty, kAutoDdpmNaiveStitch}) {
    for (const char* stratum : {"small", "medium", "large", "lesion"}) add_row(t, report, cfg, m, m, "", stratum, "max_dice");
    add_row(t, report, cfg, m, m, "", "lesion", "auprc");
    add_row(t, report, cfg, m, m, "", "healthy", "ssim");
    add_row(t, report, cfg, m, m, "", "any", "boundary");
  }
  return t;
}

std::vector<TrendCheck> ablation_checks(const EvalReport& report, const RunConfig& cfg) {
  std::vector<TrendCheck> checks;
  std::map<std::pair<int, std::string>, double> resampled, naive;
  for (const auto& r : report.records) {
    if (!std::isfinite(r.boundary)) continue;
    if (r.method == kAutoDdpm) resampled[{r.seed, r.image_id}] = r.boundary;
    if (r.method == kAutoDdpmNaiveStitch) naive[{r.seed, r.image_id}] = r.boundary;
  }
  int cases = 0, wins = 0;
  for (const auto& [key, b] : resampled) {
    const auto it = naive.find(key);
    if (it == naive.end()) continue;
    ++cases;
    wins += b < it->second;
  }
  const double rate = cases ? static_cast<double>(wins) / cases : 0.0;
  checks.push_back({"resampling-reduces-boundary-discontinuity",
                    cases >= cfg.experiment.min_boundary_cases && rate >= cfg.experiment.min_boundary_win_rate,
                    std::to_string(wins) + "/" + std::to_string(cases) + " cases (" + fmt(rate) + "; need >= " +
                        fmt(cfg.experiment.min_boundary_win_rate) + " of >= " +
                        std::to_string(cfg.experiment.min_boundary_cases) + " cases)"});
  const SeedStats on = seed_stats(report, cfg.experiment.seeds, kAutoDdpm, "small", "max_dice");
  const SeedStats off = seed_stats(report, cfg.experiment.seeds, kAutoDdpmNoUncertainty, "small", "max_dice");
  checks.push_back({"uncertainty-helps-small-lesions", std::isfinite(on.mean) && std::isfinite(off.mean) && on.mean >= off.mean,
                    "small-stratum max_dice with " + fmt(on.mean) + " vs without " + fmt(off.mean)});
  return checks;
}

// ---- commands ----

int cmd_generate_data(const RunConfig& cfg, const CommandOptions& opt) {
  const fs::path out = opt.out.empty() ? cfg.data_dir : opt.out;
  const std::string ini = cfg.to_ini();
  std::string data_section;
  const KeyValueConfig kv = cfg.to_kv();
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind("data.", 0) == 0) data_section += k + "=" + v + "\n";
  }
  const fs::path stamp = out / "data.key";
  if (fs::exists(out / "manifest.json") && !opt.force) {
    if (fs::exists(stamp) && read_text_file(stamp) == data_section) {
      say(opt.log, "dataset in " + out.string() + " is up to date; nothing to do (use --force to regenerate)");
      return kExitOk;
    }
    throw DataError(out.string() + " already holds a dataset with different settings; use --force to replace it");
  }
  if (opt.force) {
    fs::remove(out / "manifest.json");
    fs::remove(stamp);
    fs::remove_all(out / "images");
    fs::remove_all(out / "masks");
  }
  say(opt.log, "generating " + std::to_string(cfg.data.n_train + cfg.data.n_test_healthy + cfg.data.n_test_anomalous) +
                   " samples into " + out.string());
  const Dataset ds = generate_dataset(cfg.data, cfg.workers);
  dataset_save(ds, out);
  write_text_file(out / "config.ini", ini);
  write_text_file(stamp, data_section);
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const CommandOptions& opt) {
  const fs::path out = opt.out.empty() ? cfg.checkpoint.parent_path() : opt.out;
  const fs::path ckpt = out / "model.ckpt", state_path = out / "optimizer.adopt", loss_path = out / "loss.csv";
  const Dataset ds = dataset_load(cfg.data_dir);
  const auto images = ds.images(Split::train, false);
  if (images.size() < 2) throw DataError(cfg.data_dir.string() + ": need at least 2 healthy training images");
  std::string train_section;
  const KeyValueConfig kv = cfg.to_kv();
  for (const auto& [k, v] : kv.values()) {
    if ((k.rfind("train.", 0) == 0 && k != "train.epochs") || k.rfind("model.", 0) == 0 || k.rfind("schedule.", 0) == 0) {
      train_section += k + "=" + v + "\n";
    }
  }
  const fs::path stamp = out / "train.key";

  std::optional<AdamState> resume;
  UNetParams<float> params;
  std::string previous_rows;
  if (!opt.force && fs::exists(ckpt) && fs::exists(state_path)) {
    if (!fs::exists(stamp) || read_text_file(stamp) != train_section) {
      throw DataError(out.string() + " holds a run with different settings; use --force to start over");
    }
    params = checkpoint_load(ckpt, cfg.model);
    resume = optimizer_state_load(state_path, cfg.model);
    if (static_cast<int>(resume->epochs_done) >= cfg.train.epochs) {
      say(opt.log, "checkpoint already trained for " + std::to_string(resume->epochs_done) + " epochs; nothing to do");
      return kExitOk;
    }
    say(opt.log, "resuming after epoch " + std::to_string(resume->epochs_done));
    if (fs::exists(loss_path)) {
      std::istringstream in(read_text_file(loss_path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= static_cast<int>(resume->epochs_done)) {
          previous_rows += line + "\n";
        }
      }
    }
  } else {
    RandomSource rng(mix_seed(cfg.train.seed, {kInitKey}));
    params = unet_init(cfg.model, rng);
  }
  fs::create_directories(out);
  write_config(cfg, out);
  write_text_file(stamp, train_section);

  const NoiseSchedule schedule = cfg.make_noise_schedule();
  say(opt.log, "training on " + std::to_string(images.size()) + " images, " +
                   std::to_string(params.parameter_count()) + " parameters");
  auto result = train(std::move(params), images, schedule, cfg.train, resume, [&](const EpochStats& e) {
    say(opt.log, "epoch " + std::to_string(e.epoch) + "/" + std::to_string(cfg.train.epochs) + " train " +
                     fmt(e.train_loss) + " val " + fmt(e.val_loss));
  });
  checkpoint_save(result.params, ckpt);
  optimizer_state_save(result.optimizer, state_path);
  std::string csv = result.curve.to_csv();
  csv.insert(csv.find('\n') + 1, previous_rows);
  write_text_file(loss_path, csv);
  write_text_file(out / "zero_predictor.txt", fmt(result.curve.zero_predictor_val_loss) + "\n");
  say(opt.log, "zero-predictor validation loss " + fmt(result.curve.zero_predictor_val_loss));
  return kExitOk;
}

int cmd_detect(const RunConfig& cfg, const CommandOptions& opt, const fs::path& input,
               const std::optional<fs::path>& mask) {
  const Image x = load_image(input);
  const int div = cfg.model.size_divisor();
  if (x.height() % div != 0 || x.width() % div != 0 || x.empty()) {
    throw DataError(input.string() + ": image size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                    " is not divisible by " + std::to_string(div));
  }
  for (const float v : x.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError(input.string() + ": intensities must lie in [0, 1]");
  }
  DetectOptions options;
  if (mask) {
    options.forced_mask = load_mask(*mask);
    if (!options.forced_mask->same_shape(x)) throw DataError(mask->string() + ": mask shape differs from the image");
  }
  if (!fs::exists(cfg.checkpoint)) throw DataError(cfg.checkpoint.string() + ": checkpoint not found");
  const UNetDenoiser denoiser(checkpoint_load(cfg.checkpoint, cfg.model), cfg.schedule.t_max);
  const fs::path out = out_dir(opt, "detect");
  const auto res = detect(x, denoiser, cfg.make_noise_schedule(), cfg.pipeline, cfg.seed, options);
  save_detection(res, out);
  write_config(cfg, out);
  say(opt.log, "wrote " + out.string() + " (mask pixels " + std::to_string(popcount(res.mask)) + ")");
  return kExitOk;
}

int cmd_noise_paradox(const RunConfig& cfg, const CommandOptions& opt) {
  const fs::path out = out_dir(opt, "noise-paradox");
  write_config(cfg, out);
  Loaded in = load_inputs(cfg);
  const EvalReport report = cached_evaluation(cfg, opt, in);
  const auto table = noise_paradox_table(report, cfg);

  LinePlot plot{"Healthy-image SSIM vs noise level", "noise level t", "SSIM", {}};
  Series ano{"AnoDDPM", xs_of(cfg), {}, {}, false}, autod{"AutoDDPM", xs_of(cfg), {}, {}, true};
  const SeedStats a = seed_stats(report, cfg.experiment.seeds, kAutoDdpm, "healthy", "ssim");
  for (const int t : cfg.experiment.noise_levels) {
    const SeedStats s = seed_stats(report, cfg.experiment.seeds, anoddpm_label(t), "healthy", "ssim");
    ano.y.push_back(s.mean);
    ano.err.push_back(s.sd);
    autod.y.push_back(a.mean);
  }
  plot.series = {ano, autod};
  write_text_file(out / "plot.svg", render_svg(plot));
  const std::string reference =
      "method,level,metric,value\n"
      "anoddpm,50,ssim,0.8010\nanoddpm,300,ssim,0.4839\n"
      "autoddpm,adaptive,ssim,0.9341\nautoddpm,adaptive,auprc,0.1448\nautoddpm,adaptive,max_dice,0.2275\n";
  return finish_experiment(out, report, table, noise_paradox_checks(report, cfg), reference, opt.log);
}

int cmd_size_strata(const RunConfig& cfg, const CommandOptions& opt) {
  const fs::path out = out_dir(opt, "size-strata");
  write_config(cfg, out);
  Loaded in = load_inputs(cfg);
  const EvalReport report = cached_evaluation(cfg, opt, in);
  LinePlot plot{"AnoDDPM max-Dice per lesion stratum", "noise level t", "max-Dice", {}};
  for (const char* stratum : {"small", "medium", "large"}) {
    Series s{std::string("AnoDDPM ") + stratum, xs_of(cfg), {}, {}, false};
    Series a{std::string("AutoDDPM ") + stratum, xs_of(cfg), {}, {}, true};
    const SeedStats as = seed_stats(report, cfg.experiment.seeds, kAutoDdpm, stratum, "max_dice");
    for (const int t : cfg.experiment.noise_levels) {
      const SeedStats st = seed_stats(report, cfg.experiment.seeds, anoddpm_label(t), stratum, "max_dice");
      s.y.push_back(st.mean);
      s.err.push_back(st.sd);
      a.y.push_back(as.mean);
    }
    plot.series.push_back(s);
    plot.series.push_back(a);
  }
  write_text_file(out / "plot.svg", render_svg(plot));
  const std::string reference =
      "method,level,metric,value\n"
      "autoddpm,adaptive,max_dice/small,0.0746\nautoddpm,adaptive,max_dice/medium,0.2365\n"
      "autoddpm,adaptive,max_dice/large,0.3677\n";
  return finish_experiment(out, report, size_strata_table(report, cfg), size_strata_checks(report, cfg), reference,
                           opt.log);
}

int cmd_ablate(const RunConfig& cfg, const CommandOptions& opt) {
  const fs::path out = out_dir(opt, "ablate");
  write_config(cfg, out);
  Loaded in = load_inputs(cfg);
  const EvalReport report = cached_evaluation(cfg, opt, in);

  BarPlot plot{"AutoDDPM ablations", "mean over seeds", {"max-Dice", "boundary discontinuity"}, {}};
  for (const char* m : {kAutoDdpm, kAutoDdpmNoUncertainty, kAutoDdpmNaiveStitch}) {
    const SeedStats d = seed_stats(report, cfg.experiment.seeds, m, "lesion", "max_dice");
    const SeedStats b = seed_stats(report, cfg.experiment.seeds, m, "any", "boundary");
    plot.groups.push_back({m, {d.mean, b.mean}, {d.sd, b.sd}});
  }
  write_text_file(out / "plot.svg", render_svg(plot));

  // Panels: input | ground truth | mask | naive stitch | re-sampled | map without / with uncertainty.
  const auto slices = eval_slices(cfg.experiment, in.ds);
  const auto& lesions = slices.front().anomalous;
  const std::size_t n_panels = std::min<std::size_t>(lesions.size(), static_cast<std::size_t>(cfg.experiment.panels));
  if (n_panels > 0) {
    const UNetDenoiser denoiser(in.params, cfg.schedule.t_max);
    const NoiseSchedule schedule = cfg.make_noise_schedule();
    std::vector<Image> xs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n_panels; ++i) {
      xs.push_back(lesions[i]->image);
      seeds.push_back(eval_image_seed(cfg.seed, slices.front().seed, lesions[i]->id));
    }
    PipelineConfig full = cfg.pipeline;
    full.use_uncertainty = true;
    const auto res = detect_batch(xs, denoiser, schedule, full, seeds);
    fs::create_directories(out / "panels");
    for (std::size_t i = 0; i < n_panels; ++i) {
      const Heatmap ungated = final_anomaly_map(xs[i], res[i].ph_reconstruction, res[i].initial_heatmap,
                                                default_perceptual(), false, cfg.pipeline.norm_percentile);
      const Image panels[] = {xs[i], plane_cast<float>(*lesions[i]->mask), plane_cast<float>(res[i].mask),
                              naive_stitch(xs[i], res[i].initial_reconstruction, res[i].mask), res[i].ph_reconstruction, ungated, res[i].final_map};
      save_pgm_panels(out / "panels" / (lesions[i]->id + ".pgm"), panels);
    }
  }
  const std::string reference =
      "method,level,metric,value\n"
      "autoddpm,,max_dice/lesion,0.2275\nautoddpm-no-uncertainty,,max_dice/lesion,0.1994\n"
      "autoddpm,,max_dice/small,0.0746\nautoddpm-no-uncertainty,,max_dice/small,0.0495\n";
  return finish_experiment(out, report, ablation_table(report, cfg), ablation_checks(report, cfg), reference, opt.log);
}

}  // namespace autoddpm
