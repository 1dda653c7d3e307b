#include <cstdint>
#include <string>
#include <vector>

#include "patchprobe/dataset.hpp"
#include "patchprobe/errors.hpp"

namespace patchprobe {

// Same alphabet as the reference COCO tools: 5 bits per char, offset by 48,
// counts after the second stored as deltas.
std::string rle_to_string(const std::vector<std::uint32_t>& counts) {
  std::string out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::int64_t x = counts[i];
    if (i > 2) x -= static_cast<std::int64_t>(counts[i - 2]);
    bool more = true;
    while (more) {
      std::int64_t c = x & 0x1f;
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      out.push_back(static_cast<char>(c + 48));
    }
  }
  return out;
}

std::vector<std::uint32_t> rle_from_string(std::string_view text) {
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < text.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= text.size()) throw SchemaError("truncated RLE string");
      const std::int64_t c = static_cast<std::int64_t>(text[p]) - 48;
      if (c < 0 || c > 63) throw SchemaError("invalid RLE character");
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= static_cast<std::int64_t>(-1) * (std::int64_t{1} << (5 * k));
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0) throw SchemaError("negative RLE run");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

RleMask encode_rle(const BinaryMask& mask) {
  RleMask rle{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width; ++x) {
    for (int y = 0; y < mask.height; ++y) {
      const std::uint8_t v = mask.at(x, y) ? 1 : 0;
      if (v != current) {
        rle.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask decode_rle(const RleMask& rle) {
  BinaryMask mask(rle.width, rle.height);
  const std::size_t total = static_cast<std::size_t>(rle.width) * rle.height;
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : rle.counts) {
    if (pos + run > total) throw SchemaError("RLE runs exceed raster size");
    if (value) {
      for (std::size_t i = pos; i < pos + run; ++i) {
        const int x = static_cast<int>(i / rle.height);
        const int y = static_cast<int>(i % rle.height);
        mask.at(x, y) = 1;
      }
    }
    pos += run;
    value ^= 1;
  }
  if (pos != total) throw SchemaError("RLE runs do not cover the raster");
  return mask;
}

}  // namespace patchprobe
