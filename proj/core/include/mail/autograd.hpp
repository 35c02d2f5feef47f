#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mail/rng.hpp"

namespace mail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named, persistent tensor. Trainable parameters receive gradients;
/// non-trainable ones (batch-norm running statistics) are state only.
template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;
  bool decay = true;  // AdamW weight decay applies

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  const Mat<T>& value() const;
  const Mat<T>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  /// Leaf that never receives a gradient.
  Var<T> constant(Mat<T> value);
  /// Leaf that receives a gradient (used by gradient checks).
  Var<T> input(Mat<T> value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<T> param(Parameter<T>& p);

  Var<T> push(Mat<T> value, bool requires_grad, Backward backward);

  const Mat<T>& value(int id) const { return nodes_[id].value; }
  const Mat<T>& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, zero-initialised on first use.
  Mat<T>& grad_buffer(int id);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root, runs the reverse sweep and
  /// accumulates leaf gradients into their parameters.
  void backward(Var<T> root);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_nodes_;
};

template <typename T>
const Mat<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <typename T>
const Mat<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

/// Forward-pass switches shared by every layer.
template <typename T>
struct Context {
  Tape<T>& tape;
  bool train = false;
  Rng* rng = nullptr;  // dropout; required when train and dropout > 0
};

namespace ag {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// Adds a 1 x C row to every row of a.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// x * w + b with w of shape in x out and b of shape 1 x out.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
/// Row-wise layer normalisation with affine 1 x C scale and offset.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
/// Column-wise normalisation over all rows (batch x pixels).
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  bool train, T momentum, T eps);
template <typename T> Var<T> dropout(Var<T> a, T rate, Rng& rng);
/// Softmax over each row.
template <typename T> Var<T> softmax_rows(Var<T> a);
/// Multi-head scaled dot-product attention over q, k, v (S x d). Keys whose
/// key_valid entry is false get a -1e9 logit offset. When probs_out is set,
/// receives one S x S probability matrix per head.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_valid, int heads,
                 std::vector<Mat<T>>* probs_out = nullptr);

template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> slice_rows(Var<T> a, Eigen::Index begin, Eigen::Index count);
template <typename T> Var<T> slice_cols(Var<T> a, Eigen::Index begin, Eigen::Index count);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> gather_rows(Var<T> a, std::span<const int> rows);
/// Zero matrix of out_rows rows with row i of a written to rows[i].
template <typename T> Var<T> scatter_rows(Var<T> a, std::span<const int> rows, Eigen::Index out_rows);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Elementwise maximum over equally shaped inputs (first wins ties).
template <typename T> Var<T> max_of(std::span<const Var<T>> parts);
/// sum_k w(0, k) * parts[k], w of shape 1 x K.
template <typename T> Var<T> weighted_sum(std::span<const Var<T>> parts, Var<T> weights);

/// Channels-last feature maps: rows are (batch, y, x) in row-major order.
/// Produces the 3x3 zero-padded patch matrix with columns (ky, kx, channel).
template <typename T> Var<T> im2col3x3(Var<T> x, int batch, int height, int width);
/// 2x bilinear upsampling, align_corners=false.
template <typename T> Var<T> upsample2x(Var<T> x, int batch, int height, int width);

}  // namespace ag

/// Interpolation taps of 2x bilinear upsampling for one axis of length n:
/// output index o samples input coordinate max(0, (o + 0.5) / 2 - 0.5).
struct UpsampleTap {
  int lo;
  int hi;
  double w_lo;
  double w_hi;
};
std::vector<UpsampleTap> upsample_taps(int n);

}  // namespace mail
