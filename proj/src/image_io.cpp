#include "autoddpm/image_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace autoddpm {
namespace {

constexpr std::string_view kImageMagic = "ADIM";
constexpr std::string_view kMaskMagic = "ADMK";
constexpr std::uint32_t kMaxSide = 1u << 15;

std::pair<int, int> read_dims(ByteReader& r) {
  const auto version = r.u32();
  if (version != kImageFormatVersion) {
    throw DataError(r.origin() + ": unsupported version " + std::to_string(version));
  }
  const auto h = r.u32();
  const auto w = r.u32();
  if (h > kMaxSide || w > kMaxSide) throw DataError(r.origin() + ": implausible dimensions");
  return {static_cast<int>(h), static_cast<int>(w)};
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void encode_image(ByteWriter& w, const Image& img) {
  w.magic(kImageMagic);
  w.u32(kImageFormatVersion);
  w.u32(static_cast<std::uint32_t>(img.height()));
  w.u32(static_cast<std::uint32_t>(img.width()));
  w.array<float>(img.values());
}

Image decode_image(ByteReader& r) {
  r.expect_magic(kImageMagic);
  const auto [h, w] = read_dims(r);
  auto data = r.array<float>(static_cast<std::size_t>(h) * w);
  Image img(h, w, std::move(data));
  if (!all_finite(img)) throw DataError(r.origin() + ": non-finite pixel values");
  return img;
}

void encode_mask(ByteWriter& w, const BinaryMask& m) {
  w.magic(kMaskMagic);
  w.u32(kImageFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.height()));
  w.u32(static_cast<std::uint32_t>(m.width()));
  w.array<std::uint8_t>(m.values());
}

BinaryMask decode_mask(ByteReader& r) {
  r.expect_magic(kMaskMagic);
  const auto [h, w] = read_dims(r);
  auto data = r.array<std::uint8_t>(static_cast<std::size_t>(h) * w);
  for (const auto v : data) {
    if (v > 1) throw DataError(r.origin() + ": mask values must be 0 or 1");
  }
  return BinaryMask(h, w, std::move(data));
}

void save_image(const std::filesystem::path& path, const Image& img) {
  ByteWriter w;
  encode_image(w, img);
  write_file(path, w.buffer());
}

Image load_image(const std::filesystem::path& path) {
  ByteReader r(read_file(path), path.string());
  Image img = decode_image(r);
  r.expect_end();
  return img;
}

void save_mask(const std::filesystem::path& path, const BinaryMask& m) {
  ByteWriter w;
  encode_mask(w, m);
  write_file(path, w.buffer());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  ByteReader r(read_file(path), path.string());
  BinaryMask m = decode_mask(r);
  r.expect_end();
  return m;
}

void save_pgm(const std::filesystem::path& path, const Image& img, float lo, float hi) {
  std::ostringstream os;
  os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string text = os.str();
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  for (const float v : img.values()) {
    const float s = std::round((v - lo) * scale);
    text.push_back(static_cast<char>(static_cast<unsigned char>(s < 0.0f ? 0.0f : (s > 255.0f ? 255.0f : s))));
  }
  write_text_file(path, text);
}

void save_pgm_panels(const std::filesystem::path& path, std::span<const Image> panels) {
  if (panels.empty()) return;
  constexpr int gutter = 2;
  const int h = panels[0].height(), w = panels[0].width();
  const int n = static_cast<int>(panels.size());
  Image strip(h, n * w + (n - 1) * gutter, 1.0f);
  for (int k = 0; k < n; ++k) {
    require_same_shape(panels[k], panels[0], "save_pgm_panels");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) strip(y, k * (w + gutter) + x) = panels[k](y, x);
    }
  }
  save_pgm(path, strip);
}

}  // namespace autoddpm
