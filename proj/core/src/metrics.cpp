#include "blursplat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace blursplat {
namespace {

double mse_to_psnr(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double luma(const double* p) {
  return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
}

constexpr int kSsimRadius = 5;  // 11x11 window

const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v((2 * kSsimRadius + 1) * (2 * kSsimRadius + 1));
    const double sigma = 1.5;
    double sum = 0.0;
    int i = 0;
    for (int dy = -kSsimRadius; dy <= kSsimRadius; ++dy) {
      for (int dx = -kSsimRadius; dx <= kSsimRadius; ++dx, ++i) {
        v[i] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        sum += v[i];
      }
    }
    for (double& x : v) x /= sum;
    return v;
  }();
  return w;
}

// pred pixel (r, c) is compared against target pixel (r + dy, c + dx);
// both images are cropped to the overlap.
void crop_overlap(const Image& pred, const Image& target, int dy, int dx,
                  Image* pred_out, Image* target_out) {
  const int pr0 = std::max(0, -dy);
  const int pc0 = std::max(0, -dx);
  const int h = std::min(pred.height - pr0, target.height - (pr0 + dy));
  const int w = std::min(pred.width - pc0, target.width - (pc0 + dx));
  if (h <= 0 || w <= 0) {
    throw std::invalid_argument("shift_invariant: shift exceeds image size");
  }
  *pred_out = Image(w, h);
  *target_out = Image(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      pred_out->set_rgb(r, c, pred.rgb(pr0 + r, pc0 + c));
      target_out->set_rgb(r, c, target.rgb(pr0 + r + dy, pc0 + c + dx));
    }
  }
}

}  // namespace

double psnr(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "psnr");
  if (pred.data.empty()) throw std::invalid_argument("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    se += d * d;
  }
  return mse_to_psnr(se / static_cast<double>(pred.data.size()));
}

double psnr_masked(const Image& pred, const Image& target, const Mask& mask) {
  require_same_shape(pred, target, "psnr_masked");
  if (mask.width != pred.width || mask.height != pred.height) {
    throw std::invalid_argument("psnr_masked: mask dims mismatch");
  }
  double se = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < pred.height; ++r) {
    for (int c = 0; c < pred.width; ++c) {
      if (mask.at(r, c) == 0) continue;
      const double* p = pred.px(r, c);
      const double* t = target.px(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const double d = p[ch] - t[ch];
        se += d * d;
      }
      n += 3;
    }
  }
  if (n == 0) throw std::invalid_argument("psnr_masked: mask selects nothing");
  return mse_to_psnr(se / static_cast<double>(n));
}

double ssim(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "ssim");
  const int win = 2 * kSsimRadius + 1;
  if (pred.width < win || pred.height < win) {
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  }
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::vector<double>& w = ssim_window();

  double total = 0.0;
  std::size_t count = 0;
  for (int r = kSsimRadius; r < pred.height - kSsimRadius; ++r) {
    for (int c = kSsimRadius; c < pred.width - kSsimRadius; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
        int i = 0;
        for (int dy = -kSsimRadius; dy <= kSsimRadius; ++dy) {
          for (int dx = -kSsimRadius; dx <= kSsimRadius; ++dx, ++i) {
            const double x = pred.px(r + dy, c + dx)[ch];
            const double y = target.px(r + dy, c + dx)[ch];
            mx += w[i] * x;
            my += w[i] * y;
            mxx += w[i] * x * x;
            myy += w[i] * y * y;
            mxy += w[i] * x * y;
          }
        }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cxy = mxy - mx * my;
        total += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double laplacian_variance(const Image& img) {
  if (img.width < 3 || img.height < 3) {
    throw std::invalid_argument("laplacian_variance: image smaller than 3x3");
  }
  std::vector<double> response;
  response.reserve(static_cast<std::size_t>(img.width - 2) * (img.height - 2));
  for (int r = 1; r + 1 < img.height; ++r) {
    for (int c = 1; c + 1 < img.width; ++c) {
      const double v = luma(img.px(r - 1, c)) + luma(img.px(r + 1, c)) +
                       luma(img.px(r, c - 1)) + luma(img.px(r, c + 1)) -
                       4.0 * luma(img.px(r, c));
      response.push_back(v);
    }
  }
  double mean = 0.0;
  for (double v : response) mean += v;
  mean /= static_cast<double>(response.size());
  double var = 0.0;
  for (double v : response) var += (v - mean) * (v - mean);
  return var / static_cast<double>(response.size());
}

double shift_invariant(
    const std::function<double(const Image&, const Image&)>& metric,
    const Image& pred, const Image& target, int max_shift, bool symmetric,
    bool maximize) {
  if (max_shift < 0) {
    throw std::invalid_argument("shift_invariant: negative max_shift");
  }
  const int lo = symmetric ? -max_shift : 0;
  double best = 0.0;
  bool first = true;
  Image a, b;
  for (int dy = lo; dy <= max_shift; ++dy) {
    for (int dx = lo; dx <= max_shift; ++dx) {
      crop_overlap(pred, target, dy, dx, &a, &b);
      const double v = metric(a, b);
      if (first || (maximize ? v > best : v < best)) {
        best = v;
        first = false;
      }
    }
  }
  return best;
}

}  // namespace blursplat
