#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "mseg/imageio.hpp"
#include "test_util.hpp"

using namespace mseg;
using mseg::testing::TempDir;

namespace {
io::Bytes8 random_bytes(int h, int w, int ch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  io::Bytes8 b{h, w, ch, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * ch)};
  for (auto& v : b.pixels) v = static_cast<std::uint8_t>(u(rng));
  return b;
}
}  // namespace

TEST(ImageIo, PgmRoundTrip) {
  TempDir dir;
  const auto b = random_bytes(13, 21, 1, 1);
  io::write_pgm(dir / "a.pgm", b);
  const auto r = io::read_bytes(dir / "a.pgm");
  EXPECT_EQ(r.height, 13);
  EXPECT_EQ(r.width, 21);
  EXPECT_EQ(r.pixels, b.pixels);
}

TEST(ImageIo, PngRoundTripGrayAndRgb) {
  TempDir dir;
  for (int ch : {1, 3}) {
    const auto b = random_bytes(9, 17, ch, 7 + ch);
    io::write_png(dir / "a.png", b);
    const auto r = io::read_bytes(dir / "a.png");
    EXPECT_EQ(r.channels, ch);
    EXPECT_EQ(r.pixels, b.pixels);
  }
}

TEST(ImageIo, ImageBytesRoundTrip) {
  TempDir dir;
  const auto b = random_bytes(8, 8, 1, 3);
  const Image img = io::to_image(b);
  io::write_image(dir / "x.png", img);
  EXPECT_EQ(io::read_image(dir / "x.png"), img);
  io::write_image(dir / "x.pgm", img);
  EXPECT_EQ(io::read_image(dir / "x.pgm"), img);
}

TEST(ImageIo, RgbBecomesLuma) {
  const io::Bytes8 b{1, 2, 3, {255, 255, 255, 255, 0, 0}};
  const Image img = io::to_image(b);
  EXPECT_DOUBLE_EQ(img(0, 0), 1.0);
  EXPECT_NEAR(img(0, 1), 0.299, 1e-12);
}

TEST(ImageIo, MaskRoundTripAndValidation) {
  TempDir dir;
  const LabelMask m(2, 3, {0, 1, 2, 2, 1, 0});
  io::write_mask(dir / "m.pgm", m);
  EXPECT_EQ(io::read_mask(dir / "m.pgm"), m);
  io::write_pgm(dir / "bad.pgm", io::Bytes8{1, 2, 1, {0, 7}});
  EXPECT_THROW(io::read_mask(dir / "bad.pgm"), DataError);
}

TEST(ImageIo, ColorizeUsesPalette) {
  const LabelMask m(1, 3, {0, 1, 2});
  const RgbImage c = io::colorize(m);
  EXPECT_EQ(c.at(0, 0, 0), 128);
  EXPECT_EQ(c.at(2, 0, 0), 128);
  EXPECT_EQ(c.at(0, 0, 1), 255);
  EXPECT_EQ(c.at(1, 0, 2), 255);
  EXPECT_EQ(c.at(0, 0, 2), 0);
}

TEST(ImageIo, MalformedFilesRaiseDataError) {
  TempDir dir;
  EXPECT_THROW(io::read_image(dir / "missing.pgm"), DataError);
  std::ofstream(dir / "p2.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  EXPECT_THROW(io::read_image(dir / "p2.pgm"), DataError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  EXPECT_THROW(io::read_image(dir / "short.pgm"), DataError);
  std::ofstream(dir / "deep.pgm", std::ios::binary) << "P5\n1 1\n65535\nab";
  EXPECT_THROW(io::read_image(dir / "deep.pgm"), DataError);
  {
    std::ofstream f(dir / "trunc.png", std::ios::binary);
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);
    f << "garbage";
  }
  EXPECT_THROW(io::read_image(dir / "trunc.png"), DataError);
}
