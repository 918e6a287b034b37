#include <doctest.h>

#include <fstream>

#include "autoddpm/config.hpp"
#include "test_util.hpp"

using namespace autoddpm;

TEST_CASE("parse: sections, comments, bare run keys") {
  const auto kv = KeyValueConfig::parse(
      "# top\nseed = 7   ; trailing\nworkers=2\n\n[pipeline]\n t_mask = 150 \n[run]\ncache_dir = \n"
      "[experiment]\nnoise_levels = 20, 40,60\n");
  CHECK(kv.get("seed") == "7");
  CHECK(kv.get("run.seed") == "7");
  CHECK(kv.get("pipeline.t_mask") == "150");
  CHECK(kv.get("cache_dir") == "");
  const auto c = RunConfig::from_kv(kv);
  CHECK(c.seed == 7);
  CHECK(c.workers == 2);
  CHECK(c.pipeline.t_mask == 150);
  CHECK(c.cache_dir.empty());
  CHECK(c.experiment.noise_levels == std::vector<int>{20, 40, 60});
}

TEST_CASE("defaults match the documented values") {
  const auto c = RunConfig::from_kv({});
  CHECK(c.schedule.t_max == 1000);
  CHECK(c.schedule.beta_1 == 1e-4);
  CHECK(c.schedule.beta_T == 0.02);
  CHECK(c.pipeline.t_mask == 200);
  CHECK(c.pipeline.t_stitch == 50);
  CHECK(c.pipeline.n_resample == 5);
  CHECK(c.pipeline.use_uncertainty);
  CHECK(c.experiment.noise_levels == std::vector<int>{50, 100, 150, 200, 250, 300});
  CHECK(c.experiment.seeds == 5);
  CHECK(c.data.n_train == 512);
  CHECK(c.model.base_channels == 16);
  CHECK(c.model.channel_mult == std::vector<int>{1, 2});
}

TEST_CASE("stage seeds derive from the master seed unless given") {
  KeyValueConfig a, b;
  a.set_override("seed=1");
  b.set_override("seed=2");
  const auto ca = RunConfig::from_kv(a), cb = RunConfig::from_kv(b);
  CHECK(ca.data.seed != cb.data.seed);
  CHECK(ca.train.seed != cb.train.seed);
  CHECK(ca.data.seed != ca.train.seed);
  CHECK(ca.data.seed == mix_seed(1, {1}));
  a.set_override("data.seed=99");
  CHECK(RunConfig::from_kv(a).data.seed == 99);
  CHECK(RunConfig::from_kv(a).train.seed == ca.train.seed);
}

TEST_CASE("to_ini round trips exactly") {
  KeyValueConfig kv;
  for (const char* o : {"seed=5", "train.learning_rate=0.00123456789", "data.lesion_small=4,9",
                        "pipeline.use_uncertainty=false", "model.channel_mult=1,2,2", "data.height=64",
                        "data.head_rows=0.3,0.4", "cache_dir="}) {
    kv.set_override(o);
  }
  const auto c = RunConfig::from_kv(kv);
  const std::string ini = c.to_ini();
  const auto back = RunConfig::from_kv(KeyValueConfig::parse(ini));
  CHECK(back.to_ini() == ini);
  CHECK(back.train.learning_rate == 0.00123456789);
  CHECK(back.data.anomaly.small == std::array<int, 2>{4, 9});
  CHECK_FALSE(back.pipeline.use_uncertainty);
  CHECK(back.data.seed == c.data.seed);
}

TEST_CASE("errors") {
  KeyValueConfig kv;
  kv.set_override("bogus.key=1");
  CHECK_THROWS_AS(RunConfig::from_kv(kv), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig().set_override("novalue"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("[pipeline\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("just words\n"), ConfigError);
  const auto bad = [](const std::string& o) {
    KeyValueConfig k;
    k.set_override(o);
    return RunConfig::from_kv(k);
  };
  CHECK_THROWS_AS(bad("pipeline.t_mask=abc"), ConfigError);
  CHECK_THROWS_AS(bad("pipeline.t_stitch=500"), ConfigError);
  CHECK_THROWS_AS(bad("pipeline.use_uncertainty=maybe"), ConfigError);
  CHECK_THROWS_AS(bad("experiment.noise_levels=100,50"), ConfigError);
  CHECK_THROWS_AS(bad("data.height=66"), ConfigError);
  CHECK_THROWS_AS(bad("workers=0"), ConfigError);
  CHECK_THROWS_AS(bad("data.lesion_small=9"), ConfigError);
  CHECK_THROWS_AS(load_run_config(std::filesystem::path("/nonexistent/run.ini"), {}), ConfigError);
}

TEST_CASE("load_run_config: file then overrides") {
  const auto dir = testutil::temp_dir("config");
  std::ofstream(dir / "run.ini") << "seed = 3\n[train]\nepochs = 4\nbatch_size = 8\n";
  const auto c = load_run_config(dir / "run.ini", {"train.epochs=9"});
  CHECK(c.seed == 3);
  CHECK(c.train.epochs == 9);
  CHECK(c.train.batch_size == 8);
}
