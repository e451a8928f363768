#include "support.hpp"

#include "convexdyn/image_metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace convexdyn;
using namespace testing;

namespace {

Image random_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img = Image::filled(w, h, Rgb::Zero());
  for (Rgb& p : img.pixels) p = Rgb(u(rng), u(rng), u(rng));
  return img;
}

// Direct windowed SSIM: every valid window position, normalized Gaussian weights.
double naive_ssim(const Image& a, const Image& b) {
  int win = 11;
  while (win > std::min(a.width, a.height)) win -= 2;
  std::vector<double> g(win);
  double gs = 0.0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gs += g[i];
  }
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y0 = 0; y0 + win <= a.height; ++y0)
      for (int x0 = 0; x0 + win <= a.width; ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            const double w = g[dy] * g[dx] / (gs * gs);
            const double va = a.at(x0 + dx, y0 + dy)[ch], vb = b.at(x0 + dx, y0 + dy)[ch];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += (2 * ma * mb + C1) * (2 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
  return total / count;
}

}  // namespace

TEST_SUITE("image_metrics") {

TEST_CASE("identical images") {
  const Image a = random_image(16, 12, 1);
  CHECK(psnr(a, a) == kPsnrSentinel);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_squared_error(a, a) == 0.0);
}

TEST_CASE("error metrics closed forms") {
  const Image black = Image::filled(10, 10, Rgb::Zero());
  const Image dim = Image::filled(10, 10, Rgb::Constant(0.1));
  CHECK(mean_squared_error(black, dim) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(mean_absolute_error(black, dim) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(psnr(black, dim) == doctest::Approx(20.0).epsilon(1e-12));
  Image one = black;
  one.at(3, 4) = Rgb(1, 0, 0);
  CHECK(mean_squared_error(black, one) == doctest::Approx(1.0 / 300.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(black, Image::filled(9, 10, Rgb::Zero())), Error);
  CHECK_THROWS_AS(ssim(black, Image::filled(10, 9, Rgb::Zero())), Error);
}

TEST_CASE("SSIM matches a direct window evaluation") {
  for (auto [w, h] : {std::pair{24, 20}, std::pair{9, 7}, std::pair{11, 11}}) {
    const Image a = random_image(w, h, 2), b = random_image(w, h, 3);
    CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-10));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("SSIM against the negative is low") {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  Image a = Image::filled(32, 32, Rgb::Zero());
  for (Rgb& p : a.pixels) p = Rgb::Constant(coin(rng) ? 0.9 : 0.1);
  Image neg = a;
  for (Rgb& p : neg.pixels) p = Rgb::Ones() - p;
  CHECK(ssim(a, neg) < 0.1);
}

TEST_CASE("SSIM gradient matches finite differences") {
  const Image a = random_image(14, 13, 5), b = random_image(14, 13, 6);
  std::vector<Rgb> grad;
  ssim(a, b, &grad);
  REQUIRE(grad.size() == a.size());
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  double worst = 0.0, scale = 0.0;
  for (int s = 0; s < 40; ++s) {
    const std::size_t p = pick(rng);
    for (int ch = 0; ch < 3; ++ch) {
      Image ap = a, am = a;
      ap.pixels[p][ch] += 1e-6;
      am.pixels[p][ch] -= 1e-6;
      const double fd = (ssim(ap, b) - ssim(am, b)) / 2e-6;
      worst = std::max(worst, std::abs(fd - grad[p][ch]));
      scale = std::max(scale, std::abs(fd));
    }
  }
  CHECK(scale > 0.0);
  CHECK(worst < 1e-6 * scale + 1e-9);
}

TEST_CASE("PSNR decreases as noise grows") {
  const Image base = random_image(32, 32, 8, 0.3, 0.7);
  const Image pattern = random_image(32, 32, 9, -1.0, 1.0);
  double prev = kPsnrSentinel;
  for (double amp : {0.01, 0.05, 0.1}) {
    Image noisy = base;
    for (std::size_t p = 0; p < noisy.size(); ++p) noisy.pixels[p] += amp * pattern.pixels[p];
    const double v = psnr(base, noisy);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("PPM round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "convexdyn_ppm_test";
  std::filesystem::create_directories(dir);
  const Image img = random_image(7, 5, 10);
  write_ppm(dir / "a.ppm", img);
  const Image back = read_ppm(dir / "a.ppm");
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.pixels == quantize_8bit(img).pixels);
  for (const Rgb& p : back.pixels)
    for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(p[ch] * 255.0 - std::round(p[ch] * 255.0)) < 1e-9);
  // Quantized images survive a second round trip unchanged.
  write_ppm(dir / "b.ppm", back);
  CHECK(read_ppm(dir / "b.ppm").pixels == back.pixels);

  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), Error);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), Error);
  std::filesystem::remove_all(dir);
}

}
