#include "convexdyn/image_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace convexdyn {

namespace {

void check_same_shape(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size())
    throw Error(ErrorKind::ShapeMismatch, "image dimensions differ");
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double c = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) sum += k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable correlation of a W x H plane with kernel k (both axes).
std::vector<double> filter_valid(const std::vector<double>& src, int W, int H,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = W - n + 1, oh = H - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * H, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * W + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

// Adjoint of filter_valid: scatters an ow x oh map back onto W x H.
std::vector<double> filter_scatter(const std::vector<double>& src, int W, int H,
                                   const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = W - n + 1, oh = H - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * H, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = src[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
    }
  std::vector<double> out(static_cast<std::size_t>(W) * H, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(y) * W + x + i] += k[i] * v;
    }
  return out;
}

}  // namespace

double mean_squared_error(const Image& a, const Image& b) {
  check_same_shape(a, b);
  double s = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) s += (a.pixels[p] - b.pixels[p]).squaredNorm();
  return s / (3.0 * static_cast<double>(a.size()));
}

double mean_absolute_error(const Image& a, const Image& b) {
  check_same_shape(a, b);
  double s = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) s += (a.pixels[p] - b.pixels[p]).cwiseAbs().sum();
  return s / (3.0 * static_cast<double>(a.size()));
}

double psnr(const Image& a, const Image& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b, std::vector<Rgb>* grad_a) {
  check_same_shape(a, b);
  const int W = a.width, H = a.height;
  int size = std::min({11, W, H});
  if (size % 2 == 0) --size;
  if (size < 1) throw Error(ErrorKind::ShapeMismatch, "image too small for SSIM");
  const std::vector<double> k = gaussian_kernel(size, 1.5);
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int ow = W - size + 1, oh = H - size + 1;
  const double windows = static_cast<double>(ow) * oh;

  if (grad_a) grad_a->assign(a.size(), Rgb::Zero());
  double total = 0.0;
  const std::size_t P = a.size();
  std::vector<double> x(P), y(P), xx(P), yy(P), xy(P);
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < P; ++p) {
      x[p] = a.pixels[p][ch];
      y[p] = b.pixels[p][ch];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, W, H, k), my = filter_valid(y, W, H, k);
    const auto ex2 = filter_valid(xx, W, H, k), ey2 = filter_valid(yy, W, H, k);
    const auto exy = filter_valid(xy, W, H, k);
    std::vector<double> d_mu, d_ex2, d_exy;
    if (grad_a) {
      d_mu.resize(mx.size());
      d_ex2.resize(mx.size());
      d_exy.resize(mx.size());
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double sx = ex2[i] - mx[i] * mx[i], sy = ey2[i] - my[i] * my[i];
      const double sxy = exy[i] - mx[i] * my[i];
      const double A1 = 2.0 * mx[i] * my[i] + C1, A2 = 2.0 * sxy + C2;
      const double B1 = mx[i] * mx[i] + my[i] * my[i] + C1, B2 = sx + sy + C2;
      const double S = A1 * A2 / (B1 * B2);
      sum += S;
      if (grad_a) {
        const double dS_dsx = -S / B2;
        const double dS_dsxy = 2.0 * A1 / (B1 * B2);
        const double dS_dmx = 2.0 * my[i] * A2 / (B1 * B2) - 2.0 * mx[i] * S / B1;
        d_mu[i] = dS_dmx + dS_dsx * (-2.0 * mx[i]) + dS_dsxy * (-my[i]);
        d_ex2[i] = dS_dsx;
        d_exy[i] = dS_dsxy;
      }
    }
    total += sum / windows;
    if (grad_a) {
      const auto g_mu = filter_scatter(d_mu, W, H, k);
      const auto g_ex2 = filter_scatter(d_ex2, W, H, k);
      const auto g_exy = filter_scatter(d_exy, W, H, k);
      const double scale = 1.0 / (3.0 * windows);
      for (std::size_t p = 0; p < P; ++p)
        (*grad_a)[p][ch] = scale * (g_mu[p] + 2.0 * x[p] * g_ex2[p] + y[p] * g_exy[p]);
    }
  }
  return total / 3.0;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::FileIO, "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.size() * 3);
  for (std::size_t p = 0; p < image.size(); ++p)
    for (int c = 0; c < 3; ++c)
      bytes[3 * p + c] =
          static_cast<unsigned char>(std::lround(std::clamp(image.pixels[p][c], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::FileIO, "failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::FileIO, "cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw Error(ErrorKind::FileIO, path.string() + " is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorKind::FileIO, "malformed PPM header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval != 255)
    throw Error(ErrorKind::FileIO, "unsupported PPM geometry or maxval in " + path.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw Error(ErrorKind::FileIO, "truncated PPM data in " + path.string());
  Image img = Image::filled(w, h, Rgb::Zero());
  for (std::size_t p = 0; p < img.size(); ++p)
    for (int c = 0; c < 3; ++c) img.pixels[p][c] = bytes[3 * p + c] / 255.0;
  return img;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (Rgb& px : out.pixels)
    for (int c = 0; c < 3; ++c) px[c] = std::lround(std::clamp(px[c], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

}  // namespace convexdyn
