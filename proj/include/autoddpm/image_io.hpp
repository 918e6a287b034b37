#pragma once
// Image and mask containers.
//
//   image file: "ADIM" | u32 version (1) | u32 height | u32 width |
//               height*width float32, row-major, little-endian
//   mask file:  "ADMK" | u32 version (1) | u32 height | u32 width |
//               height*width uint8 in {0,1}, row-major

#include <filesystem>

#include "autoddpm/binio.hpp"
#include "autoddpm/image.hpp"

namespace autoddpm {

inline constexpr std::uint32_t kImageFormatVersion = 1;

void encode_image(ByteWriter& w, const Image& img);
Image decode_image(ByteReader& r);
void encode_mask(ByteWriter& w, const BinaryMask& m);
BinaryMask decode_mask(ByteReader& r);

void save_image(const std::filesystem::path& path, const Image& img);
Image load_image(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const BinaryMask& m);
BinaryMask load_mask(const std::filesystem::path& path);

// 8-bit binary PGM preview; values are mapped from [lo, hi] to [0, 255].
void save_pgm(const std::filesystem::path& path, const Image& img, float lo = 0.0f, float hi = 1.0f);
// Horizontal strip of equally sized panels separated by a 2 px gutter.
void save_pgm_panels(const std::filesystem::path& path, std::span<const Image> panels);

}  // namespace autoddpm
