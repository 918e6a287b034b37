#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(AUTODDPM_CLI) + " " + args + " -q >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Desk-check sized run: 32x32 phantoms, 100-step schedule, tiny network.
fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.ini";
  std::ofstream(p) << "seed = 5\n"
                   << "data_dir = " << (dir / "data").string() << "\n"
                   << "checkpoint = " << (dir / "train" / "model.ckpt").string() << "\n"
                   << "cache_dir =\n"
                   << "[schedule]\nt_max = 100\nbeta_1 = 0.001\nbeta_T = 0.2\n"
                   << "[data]\nheight = 32\nwidth = 32\nn_train = 16\nn_test_healthy = 2\nn_test_anomalous = 6\n"
                   << "lesion_small = 2,5\nlesion_medium = 6,35\nlesion_large = 36,70\n"
                   << "[model]\nbase_channels = 8\nnorm_groups = 4\ntemb_dim = 8\n"
                   << "[train]\nepochs = 2\nbatch_size = 8\nlearning_rate = 0.002\n"
                   << "[pipeline]\nt_mask = 20\nt_stitch = 5\nn_resample = 1\n"
                   << "[experiment]\nnoise_levels = 10,20,30\nseeds = 2\nhealthy_per_seed = 1\n"
                   << "anomalous_per_seed = 3\npanels = 1\nmin_boundary_cases = 0\n";
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("config --set bogus=1") == 1);
  CHECK(run("config --set pipeline.t_mask=notanumber") == 1);
  CHECK(run("config --config /nonexistent.ini") == 1);
  CHECK(run("detect") == 1);
  CHECK(run("config") == 0);
}

TEST_CASE("end to end on a tiny configuration") {
  const fs::path dir = testutil::temp_dir("cli");
  const std::string cfg = "--config " + tiny_config(dir).string();

  // Missing inputs are data errors.
  CHECK(run("noise-paradox " + cfg + " --out " + (dir / "np0").string()) == 2);

  REQUIRE(run("generate-data " + cfg) == 0);
  const std::string manifest = slurp(dir / "data" / "manifest.json");
  const auto stamp = fs::last_write_time(dir / "data" / "manifest.json");
  CHECK(run("generate-data " + cfg) == 0);
  CHECK(fs::last_write_time(dir / "data" / "manifest.json") == stamp);
  CHECK(run("generate-data " + cfg + " --set data.n_train=17") == 2);
  CHECK(slurp(dir / "data" / "manifest.json") == manifest);
  CHECK(run("generate-data " + cfg + " --force") == 0);
  CHECK(slurp(dir / "data" / "manifest.json") == manifest);

  REQUIRE(run("train " + cfg) == 0);
  for (const char* f : {"model.ckpt", "optimizer.adopt", "loss.csv", "config.ini", "zero_predictor.txt"}) {
    CHECK(fs::exists(dir / "train" / f));
  }
  const std::string ckpt = slurp(dir / "train" / "model.ckpt");
  CHECK(run("train " + cfg) == 0);
  CHECK(slurp(dir / "train" / "model.ckpt") == ckpt);

  SUBCASE("detect is deterministic and rejects malformed input") {
    const std::string input = (dir / "data" / "images" / "lesion-0000.adim").string();
    REQUIRE(run("detect " + cfg + " --input " + input + " --out " + (dir / "d1").string()) == 0);
    REQUIRE(run("detect " + cfg + " --input " + input + " --out " + (dir / "d2").string()) == 0);
    CHECK(slurp(dir / "d1" / "final_map.adim") == slurp(dir / "d2" / "final_map.adim"));
    CHECK(slurp(dir / "d1" / "mask.admk") == slurp(dir / "d2" / "mask.admk"));
    std::ofstream(dir / "junk.adim") << "not an image";
    CHECK(run("detect " + cfg + " --input " + (dir / "junk.adim").string() + " --out " + (dir / "d3").string()) == 2);
    CHECK(run("detect " + cfg + " --input " + (dir / "missing.adim").string()) == 2);
  }

  SUBCASE("experiments reproduce from their persisted config") {
    for (const char* cmd : {"noise-paradox", "size-strata", "ablate"}) {
      const fs::path a = dir / (std::string(cmd) + "-a"), b = dir / (std::string(cmd) + "-b");
      const int code = run(std::string(cmd) + " " + cfg + " --out " + a.string());
      CHECK((code == 0 || code == 3));
      CHECK(run(std::string(cmd) + " --config " + (a / "config.ini").string() + " --out " + b.string()) == code);
      for (const char* f : {"records.csv", "table.csv", "checks.csv", "reference.csv", "config.ini"}) {
        INFO(cmd << "/" << f);
        REQUIRE(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
      }
      CHECK(fs::exists(a / "plot.svg"));
    }
    CHECK(fs::exists(dir / "ablate-a" / "panels"));

    // Published anchors ride along as metadata, as fractions.
    const std::string np = slurp(dir / "noise-paradox-a" / "reference.csv");
    for (const char* row : {"anoddpm,50,ssim,0.8010", "anoddpm,300,ssim,0.4839", "autoddpm,adaptive,ssim,0.9341",
                            "autoddpm,adaptive,auprc,0.1448", "autoddpm,adaptive,max_dice,0.2275"}) {
      CHECK(np.find(row) != std::string::npos);
    }
    const std::string ss = slurp(dir / "size-strata-a" / "reference.csv");
    for (const char* row : {"max_dice/small,0.0746", "max_dice/medium,0.2365", "max_dice/large,0.3677"}) {
      CHECK(ss.find(row) != std::string::npos);
    }
    const std::string ab = slurp(dir / "ablate-a" / "reference.csv");
    for (const char* row : {"autoddpm,,max_dice/lesion,0.2275", "autoddpm-no-uncertainty,,max_dice/lesion,0.1994",
                            "autoddpm,,max_dice/small,0.0746", "autoddpm-no-uncertainty,,max_dice/small,0.0495"}) {
      CHECK(ab.find(row) != std::string::npos);
    }

    // A cached evaluation yields the same tables as a fresh one.
    const std::string cached = cfg + " --set cache_dir=" + (dir / "cache").string();
    REQUIRE(run("size-strata " + cached + " --out " + (dir / "c1").string()) != 2);
    REQUIRE(run("size-strata " + cached + " --out " + (dir / "c2").string()) != 2);
    CHECK(slurp(dir / "c1" / "table.csv") == slurp(dir / "size-strata-a" / "table.csv"));
    CHECK(slurp(dir / "c2" / "table.csv") == slurp(dir / "size-strata-a" / "table.csv"));
    CHECK(slurp(dir / "c2" / "records.csv") == slurp(dir / "size-strata-a" / "records.csv"));
  }
}
