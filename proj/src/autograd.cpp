#include "modelctl/autograd.hpp"

#include <cassert>
#include <cmath>

#include "modelctl/errors.hpp"

namespace modelctl::ad {

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(int id, const Matrix& g) {
  accumulate_with(id, [&](Matrix& dst) { dst.noalias() += g; });
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) throw InvalidArgument("backward root must be 1x1");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  Node& r = node(root.id);
  if (!r.needs_grad) return;
  r.grad = Matrix::Ones(1, 1);
  r.has_grad = true;
  for (int i = root.id; i >= 0; --i) {
    Node& n = node(i);
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

bool any_grad(Var a) { return a.tape->needs_grad(a); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), any_grad(a, b), [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) {
      tp.accumulate_with(a.id, [&](Matrix& d) { d.noalias() += g * b.value().transpose(); });
    }
    if (tp.needs_grad(b)) {
      tp.accumulate_with(b.id, [&](Matrix& d) { d.noalias() += a.value().transpose() * g; });
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), any_grad(a, b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), any_grad(a, b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate_with(b.id, [&](Matrix& d) { d -= g; });
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), any_grad(a, b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d += g.cwiseProduct(b.value()); });
    tp.accumulate_with(b.id, [&](Matrix& d) { d += g.cwiseProduct(a.value()); });
  });
}

Var add_row(Var m, Var row) {
  Tape& t = *m.tape;
  assert(row.rows() == 1 && row.cols() == m.cols());
  Matrix out = m.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), any_grad(m, row), [m, row](Tape& tp, const Matrix& g) {
    tp.accumulate(m.id, g);
    tp.accumulate_with(row.id, [&](Matrix& d) { d.row(0) += g.colwise().sum(); });
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  return t.record(a.value() * factor, any_grad(a), [a, factor](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d += g * factor; });
  });
}

Var shift(Var a, double offset) {
  Tape& t = *a.tape;
  Matrix out = a.value().array() + offset;
  return t.record(std::move(out), any_grad(a),
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a.id, g); });
}

Var one_minus(Var a) {
  Tape& t = *a.tape;
  Matrix out = 1.0 - a.value().array();
  return t.record(std::move(out), any_grad(a), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d -= g; });
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().tanh();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), any_grad(a), [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{&tp, self});
    tp.accumulate_with(a.id, [&](Matrix& d) {
      d.array() += g.array() * (1.0 - y.array().square());
    });
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = 1.0 / (1.0 + (-a.value().array()).exp());
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), any_grad(a), [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{&tp, self});
    tp.accumulate_with(a.id, [&](Matrix& d) {
      d.array() += g.array() * y.array() * (1.0 - y.array());
    });
  });
}

Var log_offset(Var a, double offset) {
  Tape& t = *a.tape;
  Matrix out = (a.value().array() + offset).log();
  return t.record(std::move(out), any_grad(a), [a, offset](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) {
      d.array() += g.array() / (a.value().array() + offset);
    });
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().square();
  return t.record(std::move(out), any_grad(a), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d.array() += 2.0 * g.array() * a.value().array(); });
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().transpose();
  return t.record(std::move(out), any_grad(a), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d += g.transpose(); });
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  assert(a.rows() == b.rows());
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ac = a.cols();
  const auto bc = b.cols();
  return t.record(std::move(out), any_grad(a, b), [a, b, ac, bc](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d += g.leftCols(ac); });
    tp.accumulate_with(b.id, [&](Matrix& d) { d += g.rightCols(bc); });
  });
}

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  Matrix out = a.value().middleCols(start, count);
  return t.record(std::move(out), any_grad(a), [a, start, count](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) { d.middleCols(start, count) += g; });
  });
}

Var gather_row(Var table, Eigen::Index index) {
  Tape& t = *table.tape;
  Matrix out = table.value().row(index);
  return t.record(std::move(out), any_grad(table), [table, index](Tape& tp, const Matrix& g) {
    tp.accumulate_with(table.id, [&](Matrix& d) { d.row(index) += g.row(0); });
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const auto n = a.rows();
  Matrix out = a.value().colwise().mean();
  return t.record(std::move(out), any_grad(a), [a, n](Tape& tp, const Matrix& g) {
    tp.accumulate_with(a.id, [&](Matrix& d) {
      d.rowwise() += g.row(0) / static_cast<double>(n);
    });
  });
}

Var frame(Var column, Eigen::Index width) {
  Tape& t = *column.tape;
  assert(column.cols() == 1);
  const auto n = column.rows();
  const auto windows = (n + width - 1) / width;
  Matrix out = Matrix::Zero(windows, width);
  // Row-major storage makes framing a flat copy.
  std::copy(column.value().data(), column.value().data() + n, out.data());
  return t.record(std::move(out), any_grad(column), [column, n](Tape& tp, const Matrix& g) {
    tp.accumulate_with(column.id, [&](Matrix& d) {
      Eigen::Map<const Eigen::VectorXd> flat(g.data(), n);
      d.col(0) += flat;
    });
  });
}

Var shift_stack(Var a, Eigen::Index taps) {
  Tape& t = *a.tape;
  assert(taps % 2 == 1);
  const auto rows = a.rows();
  const auto width = a.cols();
  const auto half = taps / 2;
  Matrix out = Matrix::Zero(rows, taps * width);
  const Matrix& v = a.value();
  for (Eigen::Index j = 0; j < taps; ++j) {
    const auto offset = j - half;
    const auto lo = std::max<Eigen::Index>(0, -offset);
    const auto hi = std::min<Eigen::Index>(rows, rows - offset);
    if (hi > lo) out.block(lo, j * width, hi - lo, width) = v.middleRows(lo + offset, hi - lo);
  }
  return t.record(std::move(out), any_grad(a),
                  [a, taps, half, rows, width](Tape& tp, const Matrix& g) {
                    tp.accumulate_with(a.id, [&](Matrix& d) {
                      for (Eigen::Index j = 0; j < taps; ++j) {
                        const auto offset = j - half;
                        const auto lo = std::max<Eigen::Index>(0, -offset);
                        const auto hi = std::min<Eigen::Index>(rows, rows - offset);
                        if (hi > lo) {
                          d.middleRows(lo + offset, hi - lo) += g.block(lo, j * width, hi - lo, width);
                        }
                      }
                    });
                  });
}

Var softmax_column(Var a) {
  Tape& t = *a.tape;
  assert(a.cols() == 1);
  const double peak = a.value().maxCoeff();
  Matrix out = (a.value().array() - peak).exp();
  out /= out.sum();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), any_grad(a), [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{&tp, self});
    const double dot = y.cwiseProduct(g).sum();
    tp.accumulate_with(a.id, [&](Matrix& d) { d.array() += y.array() * (g.array() - dot); });
  });
}

Var nll_from_logits(Var logits, Eigen::Index target) {
  Tape& t = *logits.tape;
  assert(logits.rows() == 1);
  const auto& z = logits.value();
  const double peak = z.maxCoeff();
  const double lse = peak + std::log((z.array() - peak).exp().sum());
  Matrix out(1, 1);
  out(0, 0) = lse - z(0, target);
  return t.record(std::move(out), any_grad(logits), [logits, lse, target](Tape& tp, const Matrix& g) {
    tp.accumulate_with(logits.id, [&](Matrix& d) {
      Matrix p = (logits.value().array() - lse).exp();
      p(0, target) -= 1.0;
      d += g(0, 0) * p;
    });
  });
}

}  // namespace modelctl::ad
