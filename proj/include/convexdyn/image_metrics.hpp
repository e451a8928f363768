#pragma once

#include "convexdyn/renderer.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace convexdyn {

/// PSNR reported for identical images.
constexpr double kPsnrSentinel = 100.0;

double mean_squared_error(const Image& a, const Image& b);
double mean_absolute_error(const Image& a, const Image& b);

/// 10 log10(1 / MSE) for images in [0,1]; kPsnrSentinel when MSE == 0.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over the three channels using an 11x11 Gaussian window
/// (sigma 1.5, valid positions only; the window shrinks to the largest odd
/// size that fits for smaller images), C1 = 0.01^2, C2 = 0.03^2.
/// When `grad_a` is non-null it receives dSSIM/da per pixel.
double ssim(const Image& a, const Image& b, std::vector<Rgb>* grad_a = nullptr);

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// Rounds every channel to the nearest 8-bit level, as a PPM round trip would.
Image quantize_8bit(const Image& image);

}  // namespace convexdyn
