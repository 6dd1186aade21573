#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

// Minimal tape-based reverse-mode differentiation over dense double matrices.
// Every op records its value and a closure that pushes the upstream gradient
// to its inputs. Nodes created from constants are skipped during backward, so
// the same forward code serves parameter training (parameters are variables)
// and input-gradient attacks (only the audio is a variable).
namespace modelctl::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  // Internal: used by op implementations.
  Var record(Matrix value, bool needs_grad, Backward backward);
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  void accumulate(int id, const Matrix& g);
  template <typename Fn>
  void accumulate_with(int id, Fn&& fn);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  // Gradient of the last backward() root w.r.t. v; zero matrix if v did not
  // influence the root.
  Matrix grad(Var v) const;

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

template <typename Fn>
void Tape::accumulate_with(int id, Fn&& fn) {
  Node& n = node(id);
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  fn(n.grad);
}

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Broadcast a 1xC row across every row of an RxC matrix.
Var add_row(Var m, Var row);
Var scale(Var a, double factor);
Var shift(Var a, double offset);
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
// log(a + offset)
Var log_offset(Var a, double offset);
Var square(Var a);
Var transpose(Var a);
Var concat_cols(Var a, Var b);
Var cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_row(Var table, Eigen::Index index);
Var mean_rows(Var a);
// Column vector N x 1 -> ceil(N/width) x width, zero-padding the tail.
Var frame(Var column, Eigen::Index width);
// Row t of the result is [a(t-h), ..., a(t), ..., a(t+h)] with h = taps/2 and
// zero rows outside the sequence; `taps` must be odd.
Var shift_stack(Var a, Eigen::Index taps);
// Softmax over the single column of an N x 1 matrix.
Var softmax_column(Var a);
// -log softmax(logits)[target] for a 1 x V row of logits.
Var nll_from_logits(Var logits, Eigen::Index target);

}  // namespace modelctl::ad
