// Adam optimizer on flat double buffers, with the bookkeeping scene
// editing needs: moments can be appended (new Gaussians start with zero
// history) and compacted (culled Gaussians drop their moments in the
// same pass that drops their parameters).
//
// The step count is owned by the caller and shared across groups so
// bias correction stays uniform.
#pragma once

#include <cstdint>
#include <vector>

namespace blursplat {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct AdamSlot {
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment

  std::size_t size() const { return m.size(); }

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }

  // n fresh values with zero moment history.
  void append(std::size_t n) {
    m.resize(m.size() + n, 0.0);
    v.resize(v.size() + n, 0.0);
  }

  // Drops the `stride` consecutive moments of every flagged row; drop
  // size times stride must equal the slot size.
  void compact(const std::vector<std::uint8_t>& drop, std::size_t stride);
};

// Raw kernel: params -= lr * mhat / (sqrt(vhat) + eps) over n values,
// with step-`step` bias correction (step counts from 1). m and v point
// at the moments for the same n values.
void adam_update(double* m, double* v, double* params, const double* grads,
                 std::size_t n, double lr, int step, const AdamConfig& cfg);

// adam_update over a whole slot, which must be sized to n.
void adam_step(AdamSlot* slot, double* params, const double* grads,
               std::size_t n, double lr, int step, const AdamConfig& cfg);

// Log-linear interpolation from lr0 to lr1 as t goes 0 to 1 (t is
// clamped). Both rates must be positive.
double exp_decay_lr(double lr0, double lr1, double t01);

}  // namespace blursplat
