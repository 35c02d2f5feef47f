#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mail/autograd.hpp"

namespace mail {

struct Schedule {
  std::int64_t total_steps = 0;
  std::int64_t warmup_steps = 0;
};

/// warmup_steps = round(warmup_fraction * total_steps).
Schedule make_schedule(std::int64_t total_steps, double warmup_fraction);

/// Linear warmup to base_lr, then linear decay to zero at total_steps.
/// Steps are 1-based.
double lr_at(std::int64_t step, const Schedule& schedule, double base_lr);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // global gradient norm clip; 0 disables
};

/// Decoupled-decay Adam. Moments are keyed by parameter name.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options) : options_(options) {}

  /// Applies one update to every trainable parameter and returns the
  /// gradient norm before clipping. Throws on non-finite gradients without
  /// touching any parameter.
  double step(const std::vector<Parameter<T>*>& params, double lr);

  std::int64_t steps() const { return step_; }
  void set_steps(std::int64_t s) { step_ = s; }
  const AdamWOptions& options() const { return options_; }

  std::map<std::string, Mat<T>>& first_moments() { return m_; }
  std::map<std::string, Mat<T>>& second_moments() { return v_; }
  const std::map<std::string, Mat<T>>& first_moments() const { return m_; }
  const std::map<std::string, Mat<T>>& second_moments() const { return v_; }

 private:
  AdamWOptions options_;
  std::int64_t step_ = 0;
  std::map<std::string, Mat<T>> m_;
  std::map<std::string, Mat<T>> v_;
};

}  // namespace mail
