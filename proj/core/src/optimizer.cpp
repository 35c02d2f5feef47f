#include "mail/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mail {

Schedule make_schedule(std::int64_t total_steps, double warmup_fraction) {
  if (total_steps <= 0) throw std::invalid_argument("make_schedule: total_steps must be positive");
  return {total_steps, static_cast<std::int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)))};
}

double lr_at(std::int64_t step, const Schedule& s, double base_lr) {
  if (step < 1 || step > s.total_steps)
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [1, " + std::to_string(s.total_steps) + "]");
  if (step <= s.warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  return base_lr * static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - s.warmup_steps);
}

template <typename T>
double AdamW<T>::step(const std::vector<Parameter<T>*>& params, double lr) {
  double sq = 0.0;
  for (const Parameter<T>* p : params) {
    if (!p->trainable || p->grad.size() == 0) continue;
    if (!p->grad.allFinite()) throw std::runtime_error("optimizer: non-finite gradient in " + p->name);
    sq += p->grad.template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = options_.clip_norm > 0.0 && norm > options_.clip_norm ? options_.clip_norm / (norm + 1e-6) : 1.0;

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (Parameter<T>* p : params) {
    if (!p->trainable || p->grad.size() == 0) continue;
    auto [mit, m_new] = m_.try_emplace(p->name, Mat<T>::Zero(p->value.rows(), p->value.cols()));
    auto [vit, v_new] = v_.try_emplace(p->name, Mat<T>::Zero(p->value.rows(), p->value.cols()));
    Mat<T>& m = mit->second;
    Mat<T>& v = vit->second;
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw std::logic_error("optimizer: moment shape mismatch for " + p->name);
    const Mat<T> g = p->grad * static_cast<T>(clip);
    m = static_cast<T>(b1) * m + static_cast<T>(1.0 - b1) * g;
    v = static_cast<T>(b2) * v + static_cast<T>(1.0 - b2) * g.cwiseProduct(g);
    const T step_size = static_cast<T>(lr);
    const auto mhat = m.array() / static_cast<T>(c1);
    const auto vhat = v.array() / static_cast<T>(c2);
    Mat<T> update = (mhat / (vhat.sqrt() + static_cast<T>(options_.eps))).matrix();
    if (p->decay && options_.weight_decay != 0.0) update += static_cast<T>(options_.weight_decay) * p->value;
    p->value -= step_size * update;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mail
