#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "autoddpm/binio.hpp"
#include "autoddpm/checkpoint.hpp"
#include "test_util.hpp"

using namespace autoddpm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

UNetParams<float> sample_params(std::uint64_t seed) {
  UNetConfig cfg;
  cfg.base_channels = 8;
  cfg.norm_groups = 4;
  RandomSource rng(seed);
  return unet_init(cfg, rng, {false});
}

}  // namespace

TEST_CASE("checkpoint round trip is bit identical") {
  const auto dir = testutil::temp_dir("ckpt-roundtrip");
  const auto p = sample_params(1);
  checkpoint_save(p, dir / "m.ckpt");
  const auto q = checkpoint_load(dir / "m.ckpt", p.config);
  CHECK(q == p);
  CHECK(q.config.describe() == p.config.describe());
  const std::string bytes = slurp(dir / "m.ckpt");
  CHECK(bytes.substr(0, 8) == "ADCKPT01");
  CHECK(bytes.substr(bytes.size() - 4) == "END!");
  checkpoint_save(q, dir / "again.ckpt");
  CHECK(slurp(dir / "again.ckpt") == bytes);
}

TEST_CASE("checkpoint corruption is reported, never partially loaded") {
  const auto dir = testutil::temp_dir("ckpt-corrupt");
  const auto p = sample_params(2);
  checkpoint_save(p, dir / "m.ckpt");
  const std::string bytes = slurp(dir / "m.ckpt");

  spit(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(checkpoint_load(dir / "trunc.ckpt"), DataError);
  spit(dir / "half.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(checkpoint_load(dir / "half.ckpt"), DataError);

  std::string bad = bytes;
  bad[0] = 'X';
  spit(dir / "magic.ckpt", bad);
  CHECK_THROWS_AS(checkpoint_load(dir / "magic.ckpt"), DataError);

  spit(dir / "extra.ckpt", bytes + "junk");
  CHECK_THROWS_AS(checkpoint_load(dir / "extra.ckpt"), DataError);

  CHECK_THROWS_AS(checkpoint_load(dir / "missing.ckpt"), DataError);

  UNetConfig other = p.config;
  other.base_channels = 16;
  other.norm_groups = 8;
  CHECK_THROWS_AS(checkpoint_load(dir / "m.ckpt", other), DataError);

  // Header edited so the stored hash disagrees with the stored architecture.
  std::string hashed = bytes;
  hashed[12] ^= 0x01;
  spit(dir / "hash.ckpt", hashed);
  CHECK_THROWS_AS(checkpoint_load(dir / "hash.ckpt"), DataError);
}

TEST_CASE("optimizer state round trip") {
  const auto dir = testutil::temp_dir("ckpt-opt");
  AdamState s;
  s.step = 1234567890123ull;
  s.epochs_done = 17;
  s.m = sample_params(3);
  s.v = sample_params(4);
  optimizer_state_save(s, dir / "o.adopt");
  const auto r = optimizer_state_load(dir / "o.adopt", s.m.config);
  CHECK(r.step == s.step);
  CHECK(r.epochs_done == s.epochs_done);
  CHECK(r.m == s.m);
  CHECK(r.v == s.v);
  const std::string bytes = slurp(dir / "o.adopt");
  CHECK(bytes.substr(0, 8) == "ADOPTS01");
  spit(dir / "t.adopt", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(optimizer_state_load(dir / "t.adopt", s.m.config), DataError);
  CHECK_THROWS_AS(checkpoint_load(dir / "o.adopt"), DataError);
}
