#pragma once

#include <string>

#include "mail/autograd.hpp"
#include "mail/rng.hpp"

namespace mail {

template <typename T>
Parameter<T> make_parameter(std::string name, int rows, int cols, bool decay, bool trainable = true) {
  Parameter<T> p;
  p.name = std::move(name);
  p.value = Mat<T>::Zero(rows, cols);
  p.grad = Mat<T>::Zero(rows, cols);
  p.decay = decay;
  p.trainable = trainable;
  return p;
}

template <typename T>
void init_truncated_normal(Parameter<T>& p, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.truncated_normal(stddev));
}

}  // namespace mail
