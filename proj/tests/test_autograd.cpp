#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "modelctl/autograd.hpp"

using namespace modelctl::ad;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Weighted sum of every entry so all output positions feed the scalar.
Var reduce(Tape& t, Var v, const Matrix& weights) {
  auto w = t.constant(weights);
  auto ones_l = t.constant(Matrix::Ones(1, v.rows()));
  auto ones_r = t.constant(Matrix::Ones(v.cols(), 1));
  return matmul(matmul(ones_l, mul(v, w)), ones_r);
}

using Graph = std::function<Var(Tape&, Var)>;

double max_rel_error(const Graph& g, const Matrix& x0, std::mt19937& rng) {
  Matrix weights;
  {
    Tape probe;
    auto out = g(probe, probe.constant(x0));
    weights = random_matrix(out.rows(), out.cols(), rng);
  }
  Tape tape;
  auto x = tape.variable(x0);
  auto root = reduce(tape, g(tape, x), weights);
  tape.backward(root);
  const Matrix analytic = tape.grad(x);

  auto eval = [&](const Matrix& xv) {
    Tape t;
    return reduce(t, g(t, t.constant(xv)), weights).scalar();
  };
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Matrix xp = x0, xm = x0;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (eval(xp) - eval(xm)) / (2 * h);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::fabs(fd - a) / std::max(1e-6, std::fabs(fd) + std::fabs(a)));
  }
  return worst;
}

}  // namespace

TEST_CASE("op gradients match central differences") {
  std::mt19937 rng(3);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix sq = random_matrix(3, 5, rng);
  const Matrix row = random_matrix(1, 3, rng);

  struct Case {
    const char* name;
    Eigen::Index r, c;
    Graph g;
  };
  std::vector<Case> cases = {
      {"matmul", 4, 3, [&](Tape& t, Var x) { return matmul(x, t.constant(sq)); }},
      {"matmul right", 5, 4, [&](Tape& t, Var x) { return matmul(x, t.constant(b)); }},
      {"add sub mul", 4, 3,
       [&](Tape& t, Var x) { return mul(sub(add(x, t.constant(b)), scale(x, 0.3)), x); }},
      {"add_row", 4, 3, [&](Tape& t, Var x) { return add_row(x, t.constant(row)); }},
      {"add_row wrt row", 1, 3, [&](Tape& t, Var x) { return add_row(t.constant(b), x); }},
      {"tanh sigmoid", 4, 3, [&](Tape&, Var x) { return mul(tanh(x), sigmoid(shift(x, 0.2))); }},
      {"one_minus square", 4, 3, [&](Tape&, Var x) { return square(one_minus(x)); }},
      {"log_offset", 4, 3, [&](Tape&, Var x) { return log_offset(square(x), 1e-2); }},
      {"transpose concat cols", 4, 3,
       [&](Tape& t, Var x) { return cols(concat_cols(transpose(x), t.constant(sq)), 2, 5); }},
      {"gather_row", 5, 3, [&](Tape&, Var x) { return gather_row(x, 2); }},
      {"mean_rows", 5, 3, [&](Tape&, Var x) { return mean_rows(x); }},
      {"frame", 11, 1, [&](Tape&, Var x) { return frame(x, 4); }},
      {"shift_stack", 6, 2, [&](Tape&, Var x) { return shift_stack(x, 5); }},
      {"softmax_column", 6, 1, [&](Tape&, Var x) { return softmax_column(x); }},
      {"nll_from_logits", 1, 7, [&](Tape&, Var x) { return nll_from_logits(x, 3); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const Matrix x0 = random_matrix(c.r, c.c, rng, 0.7);
    CHECK(max_rel_error(c.g, x0, rng) < 1e-6);
  }
}

TEST_CASE("frame and shift_stack layouts") {
  Tape t;
  Matrix col(5, 1);
  col << 1, 2, 3, 4, 5;
  auto f = frame(t.constant(col), 2);
  REQUIRE(f.rows() == 3);
  CHECK(f.value()(2, 0) == 5);
  CHECK(f.value()(2, 1) == 0);

  Matrix a(3, 1);
  a << 1, 2, 3;
  auto s = shift_stack(t.constant(a), 3);
  REQUIRE(s.cols() == 3);
  CHECK(s.value()(0, 0) == 0);
  CHECK(s.value()(0, 1) == 1);
  CHECK(s.value()(0, 2) == 2);
  CHECK(s.value()(2, 2) == 0);
}

TEST_CASE("constants receive no gradient") {
  Tape t;
  auto c = t.constant(Matrix::Ones(2, 2));
  auto v = t.variable(Matrix::Ones(2, 2));
  auto root = matmul(matmul(t.constant(Matrix::Ones(1, 2)), mul(c, v)), t.constant(Matrix::Ones(2, 1)));
  t.backward(root);
  CHECK(t.grad(c).isZero());
  CHECK(t.grad(v).isOnes());
  auto unused = t.variable(Matrix::Ones(1, 1));
  CHECK(t.grad(unused).isZero());
}
