#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "patchprobe/archive.hpp"
#include "patchprobe/encoder.hpp"
#include "patchprobe/errors.hpp"

using namespace patchprobe;

namespace {

RgbImage flat_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y)[0] = r;
      img.at(x, y)[1] = g;
      img.at(x, y)[2] = b;
    }
  }
  return img;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

EncoderSpec mock_spec(int dim) { return EncoderSpec{"mock16", kPatchSize, dim, Variant::Mock}; }

}  // namespace

TEST(Preprocess, SizeRule) {
  EXPECT_EQ(preprocess_size(1000, 750, 640), std::make_pair(640, 480));
  EXPECT_EQ(preprocess_size(640, 640, 640), std::make_pair(640, 640));
  EXPECT_EQ(preprocess_size(650, 488, 640), std::make_pair(640, 480));
  EXPECT_EQ(preprocess_size(750, 1000, 640), std::make_pair(480, 640));
  // Extreme aspect: the short side never drops below one patch.
  EXPECT_EQ(preprocess_size(2000, 10, 640), std::make_pair(640, 16));
}

TEST(Preprocess, RandomSizesObeyGridLaw) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 500; ++i) {
    const int w = fixtures::uniform_int(rng, 16, 3000), h = fixtures::uniform_int(rng, 16, 3000);
    const int t = 16 * fixtures::uniform_int(rng, 1, 64);
    const auto [ow, oh] = preprocess_size(w, h, t);
    EXPECT_EQ(ow % 16, 0);
    EXPECT_EQ(oh % 16, 0);
    EXPECT_GE(std::min(ow, oh), 16);
    EXPECT_LE(std::max(ow, oh), t);
  }
}

TEST(Preprocess, IdentityResizeNormalizesWithImageNetStatistics) {
  PreprocessConfig pre;
  pre.target_long_side = 32;
  const ImageTensor t = preprocess(flat_image(32, 32, 255, 0, 128), pre);
  ASSERT_EQ(t.width, 32);
  EXPECT_NEAR(t.at(0, 5, 5), (1.0f - 0.485f) / 0.229f, 1e-5);
  EXPECT_NEAR(t.at(1, 5, 5), (0.0f - 0.456f) / 0.224f, 1e-5);
  EXPECT_NEAR(t.at(2, 5, 5), (128.0f / 255.0f - 0.406f) / 0.225f, 1e-5);
}

TEST(Extract, GridFollowsImageSize) {
  const MockEncoder enc(8);
  const PatchFeatureMap m = extract(enc, preprocess(flat_image(640, 480, 10, 80, 20), {}), 3, 640, 480);
  EXPECT_EQ(m.grid_h, 30);
  EXPECT_EQ(m.grid_w, 40);
  EXPECT_EQ(m.image_h, 480);
  EXPECT_EQ(m.image_w, 640);
  EXPECT_EQ(m.channels, 8);
  EXPECT_EQ(m.data.size(), 8u * 30 * 40);
}

TEST(MockEncoder, DeterministicAndContentSensitive) {
  const MockEncoder enc;
  const auto scene = fixtures::make_blob_scene(2, 64, 31);
  const ImageTensor a = preprocess(scene.images[0], {}), b = preprocess(scene.images[1], {});
  EXPECT_EQ(enc.encode(a), enc.encode(a));
  EXPECT_NE(enc.encode(a), enc.encode(b));
}

TEST(MockEncoder, SingleSignalPatchCarriesOffset) {
  RgbImage img = flat_image(64, 48, 30, 120, 40);
  for (int y = 16; y < 32; ++y) {
    for (int x = 32; x < 48; ++x) {
      img.at(x, y)[0] = 255;
      img.at(x, y)[1] = 0;
      img.at(x, y)[2] = 255;
    }
  }
  PreprocessConfig pre;
  pre.target_long_side = 64;
  const ImageTensor t = preprocess(img, pre);
  const int dim = MockEncoder::kDefaultDim;
  const MockEncoder enc;
  const auto f = enc.encode(t);
  const auto hash = MockEncoder::content_hash(t);
  const auto offset = MockEncoder::signal_offset(dim);
  int with_offset = 0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      const auto noise = MockEncoder::patch_noise(hash, 3, 4, r, c, dim);
      double d_plain = 0.0, d_signal = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double v = f[(static_cast<std::size_t>(k) * 3 + r) * 4 + c];
        d_plain = std::max(d_plain, std::abs(v - noise[k]));
        d_signal = std::max(d_signal, std::abs(v - (noise[k] + offset[k])));
      }
      if (d_signal < 1e-6) {
        ++with_offset;
        EXPECT_EQ(r, 1);
        EXPECT_EQ(c, 2);
      } else {
        EXPECT_LT(d_plain, 1e-6);
      }
    }
  }
  EXPECT_EQ(with_offset, 1);
}

TEST(MockEncoder, BackgroundOnlyHasNoSignal) {
  const ImageTensor t = preprocess(flat_image(48, 48, 200, 200, 200), {});
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) EXPECT_FALSE(MockEncoder::is_signal_patch(t, r, c));
  }
}

TEST(Registry, MockOnlyByDefaultAndDimsFromBackend) {
  EncoderRegistry reg;
  EXPECT_TRUE(reg.available(Variant::Mock));
  EXPECT_THROW(reg.create(Variant::L), BackendUnavailable);
  EXPECT_EQ(reg.spec(Variant::Mock).embed_dim, MockEncoder::kDefaultDim);
  reg.register_backend(Variant::SPlus, [] { return std::make_unique<MockEncoder>(13); });
  EXPECT_EQ(reg.spec(Variant::SPlus).embed_dim, 13);
  EXPECT_EQ(parse_variant("s+"), Variant::SPlus);
  EXPECT_THROW(parse_variant("xl"), ConfigError);
}

TEST(Archive, RoundTripFiveMaps) {
  fixtures::TempDir dir;
  std::mt19937_64 rng(41);
  std::vector<PatchFeatureMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(fixtures::random_map(rng, 100 + i, 7, 1 + i, 2 + i));
  maps[2].flipped = true;
  write_archive(dir / "f.ppf", maps, mock_spec(7), "train");
  EXPECT_EQ(read_archive(dir / "f.ppf"), maps);
  const ArchiveReader r(dir / "f.ppf");
  EXPECT_EQ(r.header().split, "train");
  EXPECT_EQ(r.header().encoder, mock_spec(7));
  EXPECT_EQ(r.get(103), maps[3]);
  EXPECT_TRUE(r.contains(102, true));
  EXPECT_FALSE(r.contains(102, false));
  EXPECT_THROW(r.get(7), NotFoundError);
}

TEST(Archive, EveryFlippedByteIsDetected) {
  fixtures::TempDir dir;
  std::mt19937_64 rng(42);
  std::vector<PatchFeatureMap> maps{fixtures::random_map(rng, 1, 3, 2, 2), fixtures::random_map(rng, 2, 3, 1, 3)};
  write_archive(dir / "f.ppf", maps, mock_spec(3), "val");
  const auto clean = slurp(dir / "f.ppf");
  for (std::size_t i = 0; i < clean.size(); ++i) {
    auto bad = clean;
    bad[i] ^= 0x20;
    spit(dir / "bad.ppf", bad);
    EXPECT_THROW(ArchiveReader(dir / "bad.ppf"), CorruptArchiveError) << "byte " << i;
  }
  auto cut = clean;
  cut.resize(clean.size() / 2);
  spit(dir / "cut.ppf", cut);
  EXPECT_THROW(ArchiveReader(dir / "cut.ppf"), CorruptArchiveError);
}

TEST(Archive, WriterRejectsBadMapsAndLeavesNothingWhenAbandoned) {
  fixtures::TempDir dir;
  std::mt19937_64 rng(43);
  {
    ArchiveWriter w(dir / "x.ppf", ArchiveHeader{mock_spec(4), "train"});
    PatchFeatureMap m = fixtures::random_map(rng, 1, 4, 2, 2);
    w.add(m);
    EXPECT_THROW(w.add(m), ConfigError);
    m.image_id = 2;
    m.image_h = 33;
    EXPECT_THROW(w.add(m), ShapeError);
    EXPECT_THROW(w.add(fixtures::random_map(rng, 3, 5, 2, 2)), ShapeError);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ppf"));
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ppf.partial"));
}

TEST(Archive, ExtractionIsReproducibleThroughTheCache) {
  fixtures::TempDir dir;
  const auto scene = fixtures::make_blob_scene(3, 64, 44);
  const auto maps = fixtures::encode_scene(scene, true);
  write_archive(dir / "a.ppf", maps, mock_spec(MockEncoder::kDefaultDim), "train");
  EXPECT_EQ(read_archive(dir / "a.ppf"), fixtures::encode_scene(scene, true));
}
