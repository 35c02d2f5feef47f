#include "mail/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mail {

template <typename T>
Var<T> Tape<T>::constant(Mat<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::input(Mat<T> value) {
  return push(std::move(value), true, nullptr);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Var<T> v = push(p.value, p.trainable, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::push(Mat<T> value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Mat<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) throw std::invalid_argument("backward: root must be 1x1");
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).setConstant(T(1));
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (!n.param || !n.requires_grad || n.grad.size() == 0) continue;
    Parameter<T>& p = *n.param;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      p.grad = n.grad;
    else
      p.grad += n.grad;
  }
}

namespace ag {

namespace {

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const Var<T>& v : vars)
    if (v.tape()->requires_grad(v.id())) return true;
  return false;
}

template <typename T>
bool any_grad(std::span<const Var<T>> vars) {
  for (const Var<T>& v : vars)
    if (v.tape()->requires_grad(v.id())) return true;
  return false;
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat<T> out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Mat<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += g.transpose() * t.value(ia);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Mat<T> out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Mat<T> out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= g;
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Mat<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Mat<T> out = a.value() * factor;
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia, factor](Tape<T>& t, int self) {
    t.grad_buffer(ia) += t.grad(self) * factor;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
  Mat<T> out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return a.tape()->push(std::move(out), any_grad({a, row}), [ia, ir](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ir)) t.grad_buffer(ir) += g.colwise().sum();
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw std::invalid_argument("linear: shape mismatch");
  Mat<T> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->push(std::move(out), any_grad({x, w, b}), [ix, iw, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ix)) t.grad_buffer(ix).noalias() += g * t.value(iw).transpose();
    if (t.requires_grad(iw)) t.grad_buffer(iw).noalias() += t.value(ix).transpose() * g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Mat<T> out = a.value().unaryExpr([inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); });
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia, inv_sqrt2](Tape<T>& t, int self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    Mat<T> d = t.value(ia).unaryExpr([&](T x) {
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      return cdf + x * pdf;
    });
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(d);
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Mat<T> out = a.value().cwiseMax(T(0));
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia](Tape<T>& t, int self) {
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(
        t.value(ia).unaryExpr([](T x) { return x > T(0) ? T(1) : T(0); }));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Mat<T> out = a.value().unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(y.cwiseProduct((T(1) - y.array()).matrix()));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw std::invalid_argument("layer_norm: affine shape mismatch");
  Mat<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const T mu = row.mean();
    const T var = (row.array() - mu).square().mean();
    rstd(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (row.array() - mu) * rstd(i);
  }
  Mat<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->push(
      std::move(out), any_grad({x, gamma, beta}),
      [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, int self) {
        const Mat<T>& g = t.grad(self);
        if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
        if (t.requires_grad(ix)) {
          Mat<T> dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
          Mat<T>& dx = t.grad_buffer(ix);
          const T inv_c = T(1) / T(dxhat.cols());
          for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
            const T m1 = dxhat.row(i).sum() * inv_c;
            const T m2 = dxhat.row(i).dot(xhat.row(i)) * inv_c;
            dx.row(i).array() += rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  bool train, T momentum, T eps) {
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw std::invalid_argument("batch_norm: affine shape mismatch");
  Eigen::Matrix<T, 1, Eigen::Dynamic> mu(c), rstd(c);
  if (train) {
    if (n < 2) throw std::invalid_argument("batch_norm: training needs at least two rows");
    mu = x.value().colwise().mean();
    const Eigen::Matrix<T, 1, Eigen::Dynamic> var =
        (x.value().rowwise() - mu).array().square().colwise().mean().matrix();
    rstd = (var.array() + eps).rsqrt().matrix();
    const T unbias = T(n) / T(n - 1);
    running_mean.value.row(0) = (T(1) - momentum) * running_mean.value.row(0) + momentum * mu;
    running_var.value.row(0) = (T(1) - momentum) * running_var.value.row(0) + momentum * unbias * var;
  } else {
    mu = running_mean.value.row(0);
    rstd = (running_var.value.row(0).array() + eps).rsqrt().matrix();
  }
  Mat<T> xhat = ((x.value().rowwise() - mu).array().rowwise() * rstd.array()).matrix();
  Mat<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->push(
      std::move(out), any_grad({x, gamma, beta}),
      [ix, ig, ib, train, xhat = std::move(xhat), rstd](Tape<T>& t, int self) {
        const Mat<T>& g = t.grad(self);
        if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
        if (!t.requires_grad(ix)) return;
        Mat<T> dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
        Mat<T>& dx = t.grad_buffer(ix);
        if (!train) {
          dx += (dxhat.array().rowwise() * rstd.array()).matrix();
          return;
        }
        const Eigen::Matrix<T, 1, Eigen::Dynamic> m1 = dxhat.colwise().mean();
        const Eigen::Matrix<T, 1, Eigen::Dynamic> m2 = dxhat.cwiseProduct(xhat).colwise().mean();
        dx += (((dxhat.rowwise() - m1).array() - xhat.array().rowwise() * m2.array()).rowwise() * rstd.array())
                  .matrix();
      });
}

template <typename T>
Var<T> dropout(Var<T> a, T rate, Rng& rng) {
  if (rate <= T(0)) return a;
  const T keep_scale = T(1) / (T(1) - rate);
  Mat<T> keep(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.uniform() < double(rate) ? T(0) : keep_scale;
  Mat<T> out = a.value().cwiseProduct(keep);
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia, keep = std::move(keep)](Tape<T>& t, int self) {
    t.grad_buffer(ia) += t.grad(self).cwiseProduct(keep);
  });
}

namespace {

template <typename T>
void softmax_in_place(Mat<T>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const T mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  Mat<T> out = a.value();
  softmax_in_place(out);
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    const Mat<T>& g = t.grad(self);
    Mat<T>& dx = t.grad_buffer(ia);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const T dot = g.row(i).dot(y.row(i));
      dx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_valid, int heads,
                 std::vector<Mat<T>>* probs_out) {
  const Eigen::Index s = q.rows(), d = q.cols();
  if (k.rows() != s || v.rows() != s || k.cols() != d || v.cols() != d)
    throw std::invalid_argument("attention: q, k, v shape mismatch");
  if (static_cast<Eigen::Index>(key_valid.size()) != s) throw std::invalid_argument("attention: key mask length");
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: d not divisible by heads");
  const Eigen::Index dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  Eigen::Matrix<T, 1, Eigen::Dynamic> key_bias(s);
  for (Eigen::Index j = 0; j < s; ++j) key_bias(j) = key_valid[j] ? T(0) : T(-1e9);

  std::vector<Mat<T>> probs(heads);
  Mat<T> out(s, d);
  for (int h = 0; h < heads; ++h) {
    Mat<T> logits(s, s);
    logits.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
    logits *= inv_sqrt;
    logits.rowwise() += key_bias;
    softmax_in_place(logits);
    out.middleCols(h * dh, dh).noalias() = logits * v.value().middleCols(h * dh, dh);
    probs[h] = std::move(logits);
  }
  if (probs_out) *probs_out = probs;
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->push(
      std::move(out), any_grad({q, k, v}),
      [iq, ik, iv, heads, dh, inv_sqrt, probs = std::move(probs)](Tape<T>& t, int self) {
        const Mat<T>& g = t.grad(self);
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
        for (int h = 0; h < heads; ++h) {
          const Mat<T>& p = probs[h];
          const auto gh = g.middleCols(h * dh, dh);
          if (gv) t.grad_buffer(iv).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
          if (!gq && !gk) continue;
          Mat<T> dp(p.rows(), p.cols());
          dp.noalias() = gh * t.value(iv).middleCols(h * dh, dh).transpose();
          for (Eigen::Index i = 0; i < dp.rows(); ++i) {
            const T dot = dp.row(i).dot(p.row(i));
            dp.row(i).array() = p.row(i).array() * (dp.row(i).array() - dot);
          }
          dp *= inv_sqrt;
          if (gq) t.grad_buffer(iq).middleCols(h * dh, dh).noalias() += dp * t.value(ik).middleCols(h * dh, dh);
          if (gk)
            t.grad_buffer(ik).middleCols(h * dh, dh).noalias() += dp.transpose() * t.value(iq).middleCols(h * dh, dh);
        }
      });
}

template <typename T>
Var<T> slice_rows(Var<T> a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::out_of_range("slice_rows");
  Mat<T> out = a.value().middleRows(begin, count);
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia, begin, count](Tape<T>& t, int self) {
    t.grad_buffer(ia).middleRows(begin, count) += t.grad(self);
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw std::out_of_range("slice_cols");
  Mat<T> out = a.value().middleCols(begin, count);
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia, begin, count](Tape<T>& t, int self) {
    t.grad_buffer(ia).middleCols(begin, count) += t.grad(self);
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<T> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].tape()->push(std::move(out), any_grad(parts), [layout = std::move(layout)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout)
      if (t.requires_grad(id)) t.grad_buffer(id) += g.middleRows(offset, t.value(id).rows());
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<T> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].tape()->push(std::move(out), any_grad(parts), [layout = std::move(layout)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout)
      if (t.requires_grad(id)) t.grad_buffer(id) += g.middleCols(offset, t.value(id).cols());
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const int> rows) {
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}),
                        [ia, idx = std::vector<int>(rows.begin(), rows.end())](Tape<T>& t, int self) {
                          const Mat<T>& g = t.grad(self);
                          Mat<T>& da = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(i);
                        });
}

template <typename T>
Var<T> scatter_rows(Var<T> a, std::span<const int> rows, Eigen::Index out_rows) {
  if (static_cast<Eigen::Index>(rows.size()) != a.rows()) throw std::invalid_argument("scatter_rows: index count");
  Mat<T> out = Mat<T>::Zero(out_rows, a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= out_rows) throw std::out_of_range("scatter_rows: index out of range");
    out.row(rows[i]) += a.value().row(static_cast<Eigen::Index>(i));
  }
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}),
                        [ia, idx = std::vector<int>(rows.begin(), rows.end())](Tape<T>& t, int self) {
                          const Mat<T>& g = t.grad(self);
                          Mat<T>& da = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < idx.size(); ++i) da.row(i) += g.row(idx[i]);
                        });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}), [ia](Tape<T>& t, int self) {
    t.grad_buffer(ia).array() += t.grad(self)(0, 0);
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), T(1) / T(a.value().size()));
}

template <typename T>
Var<T> max_of(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("max_of: no inputs");
  for (const auto& p : parts) check_same_shape(p, parts[0], "max_of");
  Mat<T> out = parts[0].value();
  std::vector<int> winner(static_cast<std::size_t>(out.size()), 0);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const Mat<T>& pk = parts[k].value();
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (pk.data()[i] > out.data()[i]) {
        out.data()[i] = pk.data()[i];
        winner[i] = static_cast<int>(k);
      }
    }
  }
  std::vector<int> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape()->push(
      std::move(out), any_grad(parts),
      [ids = std::move(ids), winner = std::move(winner)](Tape<T>& t, int self) {
        const Mat<T>& g = t.grad(self);
        for (std::size_t i = 0; i < winner.size(); ++i) {
          const int id = ids[winner[i]];
          if (t.requires_grad(id)) t.grad_buffer(id).data()[i] += g.data()[i];
        }
      });
}

template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> parts, Var<T> weights) {
  if (parts.empty()) throw std::invalid_argument("weighted_sum: no inputs");
  if (weights.rows() != 1 || weights.cols() != static_cast<Eigen::Index>(parts.size()))
    throw std::invalid_argument("weighted_sum: weights must be 1 x K");
  Mat<T> out = Mat<T>::Zero(parts[0].rows(), parts[0].cols());
  std::vector<int> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    check_same_shape(parts[k], parts[0], "weighted_sum");
    out += weights.value()(0, static_cast<Eigen::Index>(k)) * parts[k].value();
    ids.push_back(parts[k].id());
  }
  const int iw = weights.id();
  bool needs = any_grad(parts) || any_grad({weights});
  return weights.tape()->push(std::move(out), needs, [ids = std::move(ids), iw](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (t.requires_grad(ids[k])) t.grad_buffer(ids[k]) += t.value(iw)(0, kk) * g;
      if (t.requires_grad(iw)) t.grad_buffer(iw)(0, kk) += g.cwiseProduct(t.value(ids[k])).sum();
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Mat<T> out = a.value().transpose();
  const int ia = a.id();
  return a.tape()->push(std::move(out), any_grad({a}),
                        [ia](Tape<T>& t, int self) { t.grad_buffer(ia) += t.grad(self).transpose(); });
}

template <typename T>
Var<T> im2col3x3(Var<T> x, int batch, int height, int width) {
  const Eigen::Index c = x.cols();
  if (x.rows() != Eigen::Index(batch) * height * width) throw std::invalid_argument("im2col3x3: row count");
  Mat<T> out = Mat<T>::Zero(x.rows(), 9 * c);
  const Mat<T>& in = x.value();
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) {
        const Eigen::Index row = (Eigen::Index(b) * height + y) * width + xx;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= width) continue;
            out.row(row).segment((ky * 3 + kx) * c, c) = in.row((Eigen::Index(b) * height + sy) * width + sx);
          }
        }
      }
  const int ix = x.id();
  return x.tape()->push(std::move(out), any_grad({x}), [ix, batch, height, width, c](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    Mat<T>& dx = t.grad_buffer(ix);
    for (int b = 0; b < batch; ++b)
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) {
          const Eigen::Index row = (Eigen::Index(b) * height + y) * width + xx;
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= width) continue;
              dx.row((Eigen::Index(b) * height + sy) * width + sx) += g.row(row).segment((ky * 3 + kx) * c, c);
            }
          }
        }
  });
}

template <typename T>
Var<T> upsample2x(Var<T> x, int batch, int height, int width) {
  if (x.rows() != Eigen::Index(batch) * height * width) throw std::invalid_argument("upsample2x: row count");
  const auto ty = upsample_taps(height);
  const auto tx = upsample_taps(width);
  const int oh = 2 * height, ow = 2 * width;
  Mat<T> out(Eigen::Index(batch) * oh * ow, x.cols());
  const Mat<T>& in = x.value();
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = Eigen::Index(b) * height * width;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& py = ty[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const auto& px = tx[ox];
        auto row = out.row((Eigen::Index(b) * oh + oy) * ow + ox);
        row = T(py.w_lo * px.w_lo) * in.row(base + Eigen::Index(py.lo) * width + px.lo) +
              T(py.w_lo * px.w_hi) * in.row(base + Eigen::Index(py.lo) * width + px.hi) +
              T(py.w_hi * px.w_lo) * in.row(base + Eigen::Index(py.hi) * width + px.lo) +
              T(py.w_hi * px.w_hi) * in.row(base + Eigen::Index(py.hi) * width + px.hi);
      }
    }
  }
  const int ix = x.id();
  return x.tape()->push(std::move(out), any_grad({x}),
                        [ix, batch, height, width, ty, tx](Tape<T>& t, int self) {
                          const Mat<T>& g = t.grad(self);
                          Mat<T>& dx = t.grad_buffer(ix);
                          const int oh = 2 * height, ow = 2 * width;
                          for (int b = 0; b < batch; ++b) {
                            const Eigen::Index base = Eigen::Index(b) * height * width;
                            for (int oy = 0; oy < oh; ++oy) {
                              const auto& py = ty[oy];
                              for (int ox = 0; ox < ow; ++ox) {
                                const auto& px = tx[ox];
                                const auto grow = g.row((Eigen::Index(b) * oh + oy) * ow + ox);
                                dx.row(base + Eigen::Index(py.lo) * width + px.lo) += T(py.w_lo * px.w_lo) * grow;
                                dx.row(base + Eigen::Index(py.lo) * width + px.hi) += T(py.w_lo * px.w_hi) * grow;
                                dx.row(base + Eigen::Index(py.hi) * width + px.lo) += T(py.w_hi * px.w_lo) * grow;
                                dx.row(base + Eigen::Index(py.hi) * width + px.hi) += T(py.w_hi * px.w_hi) * grow;
                              }
                            }
                          }
                        });
}

#define MAIL_INSTANTIATE_OPS(T)                                                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                                                         \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                                      \
  template Var<T> add(Var<T>, Var<T>);                                                                            \
  template Var<T> sub(Var<T>, Var<T>);                                                                            \
  template Var<T> mul(Var<T>, Var<T>);                                                                            \
  template Var<T> scale(Var<T>, T);                                                                               \
  template Var<T> add_row(Var<T>, Var<T>);                                                                        \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                                 \
  template Var<T> gelu(Var<T>);                                                                                   \
  template Var<T> relu(Var<T>);                                                                                   \
  template Var<T> sigmoid(Var<T>);                                                                                \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                          \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, bool, T, T);                   \
  template Var<T> dropout(Var<T>, T, Rng&);                                                                       \
  template Var<T> softmax_rows(Var<T>);                                                                           \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>, int, std::vector<Mat<T>>*);            \
  template Var<T> slice_rows(Var<T>, Eigen::Index, Eigen::Index);                                                 \
  template Var<T> slice_cols(Var<T>, Eigen::Index, Eigen::Index);                                                 \
  template Var<T> concat_rows(std::span<const Var<T>>);                                                           \
  template Var<T> concat_cols(std::span<const Var<T>>);                                                           \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                                                      \
  template Var<T> transpose(Var<T>);                                                                             \
  template Var<T> scatter_rows(Var<T>, std::span<const int>, Eigen::Index);                                       \
  template Var<T> sum(Var<T>);                                                                                    \
  template Var<T> mean(Var<T>);                                                                                   \
  template Var<T> max_of(std::span<const Var<T>>);                                                                \
  template Var<T> weighted_sum(std::span<const Var<T>>, Var<T>);                                                  \
  template Var<T> im2col3x3(Var<T>, int, int, int);                                                               \
  template Var<T> upsample2x(Var<T>, int, int, int);

MAIL_INSTANTIATE_OPS(float)
MAIL_INSTANTIATE_OPS(double)
#undef MAIL_INSTANTIATE_OPS

}  // namespace ag

std::vector<UpsampleTap> upsample_taps(int n) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const int lo = static_cast<int>(src);
    const int hi = lo < n - 1 ? lo + 1 : lo;
    const double frac = src - lo;
    taps[o] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mail
