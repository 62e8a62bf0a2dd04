#pragma once

#include <map>
#include <string>
#include <vector>

#include "nas/tensor.hpp"

namespace nas {

// Cosine-annealing family configuration.  The default single-period setup
// warms up linearly to lr_max, then decays to lr_min by total_epochs.
// restart_periods, when non-empty, replaces the single period with a warm
// restart sequence whose lr_max shrinks by restart_decay each period.
struct ScheduleConfig {
  double lr_min = 0.0001;
  double lr_max = 0.1;
  double warmup_epochs = 20.0;
  double total_epochs = 100.0;
  std::vector<double> restart_periods;
  double restart_decay = 1.0;
};

// Modified cosine decay: lr_min + (lr_max - lr_min) * (2^(u+1) - 2)/2 with
// u = (1 + cos(pi * t_cur / t_i)) / 2.  Hits lr_max exactly at t_cur = 0 and
// lr_min exactly at t_cur = t_i, and decays faster than the plain cosine.
double cosine_mod_lr(double lr_min, double lr_max, double t_cur, double t_i);
inline double cosine_mod_lr(const ScheduleConfig& cfg, double t_cur) {
  return cosine_mod_lr(cfg.lr_min, cfg.lr_max, t_cur, cfg.total_epochs - cfg.warmup_epochs);
}

// Child-network schedule: linear 0 -> lr_max over warmup_epochs, then the
// modified cosine decay to lr_min at total_epochs (held there afterwards).
double warmup_then_cosine(const ScheduleConfig& cfg, double epoch);

// Controller schedule: 0.1 divided by 10 every 20 epochs, floored at 0.0001.
double piecewise_controller_lr(long epoch);

// Momentum SGD with coupled weight decay:
//   v <- beta * v + (grad + lambda * w);  w <- w - lr * v.
// Velocity buffers are keyed by parameter name so they can be checkpointed.
struct OptimState {
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::map<std::string, Tensor> velocity;
};

// Applies one step to every parameter that received a gradient this pass
// (parameters not touched by the sampled architecture are left untouched,
// velocity included).  Does not clear gradients.
void momentum_step(const std::map<std::string, Tensor>& params, OptimState& state, double lr);

// Plain SGD: w <- w - lr * (grad + lambda * w), same missing-grad skip rule.
void sgd_step(const std::map<std::string, Tensor>& params, double lr, double weight_decay);

void zero_gradients(const std::map<std::string, Tensor>& params);

}  // namespace nas
