#include "autoddpm/checkpoint.hpp"

#include <numeric>

#include "autoddpm/binio.hpp"

namespace autoddpm {
namespace {

constexpr std::string_view kCheckpointMagic = "ADCKPT01";
constexpr std::string_view kOptimizerMagic = "ADOPTS01";
constexpr std::string_view kTrailer = "END!";

void encode_header(ByteWriter& w, std::string_view magic, const UNetConfig& cfg) {
  w.magic(magic);
  w.u32(kCheckpointVersion);
  w.u64(cfg.arch_hash());
  w.u32(static_cast<std::uint32_t>(cfg.in_channels));
  w.u32(static_cast<std::uint32_t>(cfg.base_channels));
  w.u32(static_cast<std::uint32_t>(cfg.blocks_per_level));
  w.u32(static_cast<std::uint32_t>(cfg.temb_dim));
  w.u32(static_cast<std::uint32_t>(cfg.norm_groups));
  w.u32(static_cast<std::uint32_t>(cfg.channel_mult.size()));
  for (const int m : cfg.channel_mult) w.u32(static_cast<std::uint32_t>(m));
}

UNetConfig decode_header(ByteReader& r, std::string_view magic, const std::optional<UNetConfig>& expected) {
  r.expect_magic(magic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError(r.origin() + ": unsupported version " + std::to_string(version));
  const auto hash = r.u64();
  UNetConfig cfg;
  cfg.in_channels = static_cast<int>(r.u32());
  cfg.base_channels = static_cast<int>(r.u32());
  cfg.blocks_per_level = static_cast<int>(r.u32());
  cfg.temb_dim = static_cast<int>(r.u32());
  cfg.norm_groups = static_cast<int>(r.u32());
  const auto levels = r.u32();
  if (levels > 16) throw DataError(r.origin() + ": implausible level count");
  cfg.channel_mult.clear();
  for (std::uint32_t i = 0; i < levels; ++i) cfg.channel_mult.push_back(static_cast<int>(r.u32()));
  if (cfg.arch_hash() != hash) throw DataError(r.origin() + ": architecture hash does not match stored config");
  if (expected && expected->arch_hash() != hash) {
    throw DataError(r.origin() + ": architecture hash mismatch (checkpoint " + cfg.describe() + ", expected " +
                    expected->describe() + ")");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(r.origin() + ": " + e.what());
  }
  return cfg;
}

void encode_tensors(ByteWriter& w, const UNetParams<float>& p) {
  w.u32(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) {
    w.string(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (const int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.array<float>(t.data);
  }
}

// Decodes tensors and checks them against the layout implied by cfg.
UNetParams<float> decode_tensors(ByteReader& r, const UNetConfig& cfg) {
  RandomSource unused(0);
  UNetParams<float> layout = unet_init(cfg, unused);
  const auto count = r.u32();
  if (count != layout.tensors.size()) throw DataError(r.origin() + ": tensor count does not match architecture");
  for (auto& t : layout.tensors) {
    const auto name = r.string();
    if (name != t.name) throw DataError(r.origin() + ": unexpected tensor " + name + " (wanted " + t.name + ")");
    const auto ndim = r.u32();
    if (ndim != t.shape.size()) throw DataError(r.origin() + ": rank mismatch for " + name);
    for (const int d : t.shape) {
      if (r.u32() != static_cast<std::uint32_t>(d)) throw DataError(r.origin() + ": shape mismatch for " + name);
    }
    t.data = r.array<float>(t.data.size());
  }
  return layout;
}

}  // namespace

void checkpoint_save(const UNetParams<float>& params, const std::filesystem::path& path) {
  ByteWriter w;
  encode_header(w, kCheckpointMagic, params.config);
  encode_tensors(w, params);
  w.magic(kTrailer);
  write_file(path, w.buffer());
}

UNetParams<float> checkpoint_load(const std::filesystem::path& path, const std::optional<UNetConfig>& expected) {
  ByteReader r(read_file(path), path.string());
  const UNetConfig cfg = decode_header(r, kCheckpointMagic, expected);
  UNetParams<float> p = decode_tensors(r, cfg);
  r.expect_magic(kTrailer);
  r.expect_end();
  return p;
}

void optimizer_state_save(const AdamState& state, const std::filesystem::path& path) {
  ByteWriter w;
  encode_header(w, kOptimizerMagic, state.m.config);
  w.u64(state.step);
  w.u32(state.epochs_done);
  encode_tensors(w, state.m);
  encode_tensors(w, state.v);
  w.magic(kTrailer);
  write_file(path, w.buffer());
}

AdamState optimizer_state_load(const std::filesystem::path& path, const UNetConfig& expected) {
  ByteReader r(read_file(path), path.string());
  const UNetConfig cfg = decode_header(r, kOptimizerMagic, expected);
  AdamState s;
  s.step = r.u64();
  s.epochs_done = r.u32();
  s.m = decode_tensors(r, cfg);
  s.v = decode_tensors(r, cfg);
  r.expect_magic(kTrailer);
  r.expect_end();
  return s;
}

}  // namespace autoddpm
