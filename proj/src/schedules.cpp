#include "nas/schedules.hpp"

#include <cmath>

namespace nas {

double cosine_mod_lr(double lr_min, double lr_max, double t_cur, double t_i) {
  NAS_CHECK(lr_min >= 0.0 && lr_min < lr_max, ConfigError,
            "cosine schedule: requires 0 <= lr_min < lr_max");
  NAS_CHECK(t_i >= 1.0, ConfigError, "cosine schedule: period must be >= 1");
  NAS_CHECK(t_cur >= 0.0 && t_cur <= t_i, ContractError,
            "cosine schedule: t_cur outside [0, period]");
  const double u = 0.5 * (1.0 + std::cos(M_PI * t_cur / t_i));
  const double factor = (std::exp2(u + 1.0) - 2.0) / 2.0;
  return lr_min + (lr_max - lr_min) * factor;
}

double warmup_then_cosine(const ScheduleConfig& cfg, double epoch) {
  NAS_CHECK(epoch >= 0.0, ContractError, "schedule: epoch must be >= 0");
  NAS_CHECK(cfg.total_epochs > cfg.warmup_epochs, ConfigError,
            "schedule: total_epochs must exceed warmup_epochs");
  if (cfg.warmup_epochs > 0.0 && epoch < cfg.warmup_epochs)
    return cfg.lr_max * (epoch / cfg.warmup_epochs);

  double t = epoch - cfg.warmup_epochs;
  if (cfg.restart_periods.empty()) {
    const double t_i = cfg.total_epochs - cfg.warmup_epochs;
    return cosine_mod_lr(cfg.lr_min, cfg.lr_max, std::min(t, t_i), t_i);
  }
  double lr_max = cfg.lr_max;
  for (std::size_t i = 0; i < cfg.restart_periods.size(); ++i) {
    const double t_i = cfg.restart_periods[i];
    const bool last = i + 1 == cfg.restart_periods.size();
    // A restart fires exactly at the period boundary: t == t_i belongs to
    // the next period (except for the final one, which holds lr_min).
    if (t < t_i || last)
      return cosine_mod_lr(cfg.lr_min, lr_max, std::min(t, t_i), t_i);
    t -= t_i;
    lr_max = std::max(cfg.lr_min * (1.0 + 1e-12), lr_max * cfg.restart_decay);
  }
  return cfg.lr_min;  // unreachable; keeps the compiler satisfied
}

double piecewise_controller_lr(long epoch) {
  NAS_CHECK(epoch >= 0, ContractError, "controller schedule: epoch must be >= 0");
  switch (epoch / 20) {
    case 0: return 0.1;
    case 1: return 0.01;
    case 2: return 0.001;
    default: return 0.0001;
  }
}

void momentum_step(const std::map<std::string, Tensor>& params, OptimState& state, double lr) {
  for (const auto& [name, w_const] : params) {
    Tensor w = w_const;
    if (!w.has_grad()) continue;
    auto [it, inserted] = state.velocity.try_emplace(name);
    if (inserted) it->second = Tensor::zeros(w.shape());
    Tensor v = it->second;
    NAS_CHECK(v.shape() == w.shape(), DimensionError,
              "momentum_step: velocity/parameter shape mismatch for " + name);
    const std::vector<double>& grad = w.grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double g = grad[i] + state.weight_decay * w.data()[i];
      v.data()[i] = state.momentum * v.data()[i] + g;
      w.data()[i] -= lr * v.data()[i];
    }
  }
}

void sgd_step(const std::map<std::string, Tensor>& params, double lr, double weight_decay) {
  for (const auto& [name, w_const] : params) {
    Tensor w = w_const;
    if (!w.has_grad()) continue;
    const std::vector<double>& grad = w.grad();
    for (std::size_t i = 0; i < w.numel(); ++i)
      w.data()[i] -= lr * (grad[i] + weight_decay * w.data()[i]);
  }
}

void zero_gradients(const std::map<std::string, Tensor>& params) {
  for (const auto& [name, w] : params) {
    Tensor t = w;  // handles share storage; copying avoids a const_cast
    t.zero_grad();
  }
}

}  // namespace nas
