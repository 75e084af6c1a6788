#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "dcmil/params.hpp"
#include "dcmil/tape.hpp"
#include "fd_check.hpp"

using namespace dcmil;
using namespace dcmil::ad;
using fdcheck::max_rel_err;
using fdcheck::random_mat;
using Mat = Eigen::MatrixXd;

namespace {
std::mt19937_64 g_rng(991);

// Reduce a matrix node to a scalar through a fixed random weighting so that
// gradients reach every entry.
int weigh(Tape& t, int a, const Mat& w) { return sum(t, cmul(t, a, t.constant(w))); }
}  // namespace

TEST_CASE("elementwise and broadcast op gradients") {
  Mat a = random_mat(3, 4, g_rng), b = random_mat(3, 4, g_rng);
  Mat v = random_mat(3, 1, g_rng), r = random_mat(1, 4, g_rng);
  Mat w = random_mat(3, 4, g_rng);

  CHECK(max_rel_err({a, b}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, add(t, x[0], x[1]), w);
        }) < 1e-4);
  CHECK(max_rel_err({a, b}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, sub(t, x[0], x[1]), w);
        }) < 1e-4);
  CHECK(max_rel_err({a, b}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, cmul(t, x[0], x[1]), w);
        }) < 1e-4);
  CHECK(max_rel_err({a, v}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, colbcast_mul(t, x[0], x[1]), w);
        }) < 1e-4);
  CHECK(max_rel_err({a, r}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, add_rowbcast(t, x[0], x[1]), w);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, scale(t, x[0], -1.7), w);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, add_const(t, x[0], Mat::Constant(3, 4, 0.3)), w);
        }) < 1e-4);
}

TEST_CASE("structural op gradients") {
  Mat a = random_mat(3, 4, g_rng), b = random_mat(4, 2, g_rng);
  Mat w32 = random_mat(3, 2, g_rng), w43 = random_mat(4, 3, g_rng);
  Mat w34 = random_mat(3, 4, g_rng);
  Mat w38 = random_mat(3, 8, g_rng), w64 = random_mat(6, 4, g_rng);
  Mat w32b = random_mat(3, 2, g_rng), w14 = random_mat(1, 4, g_rng);

  CHECK(max_rel_err({a, b}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, matmul(t, x[0], x[1]), w32);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, transpose(t, x[0]), w43);
        }) < 1e-4);
  CHECK(max_rel_err({a, w34}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, hconcat(t, {x[0], x[1]}), w38);
        }) < 1e-4);
  CHECK(max_rel_err({a, w34}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, vconcat(t, {x[0], x[1]}), w64);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, slice_cols(t, x[0], 1, 2), w32b);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, row(t, x[0], 2), w14);
        }) < 1e-4);
}

TEST_CASE("nonlinearity gradients") {
  Mat a = random_mat(3, 4, g_rng);
  Mat pos = a.array().abs() + 0.5;
  Mat w = random_mat(3, 4, g_rng);
  Mat gain = random_mat(1, 4, g_rng, 0.5);
  gain.array() += 1.0;
  Mat bias = random_mat(1, 4, g_rng, 0.2);

  auto check_unary = [&](auto op) {
    return max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
      return weigh(t, op(t, x[0]), w);
    });
  };
  CHECK(check_unary([](Tape& t, int x) { return softmax_rows(t, x); }) < 1e-4);
  CHECK(check_unary([](Tape& t, int x) { return softmax_cols(t, x); }) < 1e-4);
  CHECK(check_unary([](Tape& t, int x) { return gelu(t, x); }) < 1e-4);
  CHECK(check_unary([](Tape& t, int x) { return tanh_op(t, x); }) < 1e-4);
  CHECK(check_unary([](Tape& t, int x) { return exp_op(t, x); }) < 1e-4);
  CHECK(max_rel_err({pos}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, log_op(t, x[0]), w);
        }) < 1e-4);
  CHECK(max_rel_err({pos}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, pow_op(t, x[0], -0.5), w);
        }) < 1e-4);
  CHECK(max_rel_err({a, gain, bias}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, layer_norm_rows(t, x[0], x[1], x[2]), w);
        }) < 1e-4);
  // relu/clamp away from their kinks
  Mat far = a;
  far.array() += 3.0;
  CHECK(max_rel_err({far}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, relu(t, x[0]), w);
        }) < 1e-4);
  CHECK(max_rel_err({far}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, clamp_op(t, x[0], -10.0, 10.0), w);
        }) < 1e-4);
}

TEST_CASE("reduction gradients") {
  Mat a = random_mat(4, 3, g_rng);
  Mat col = random_mat(5, 1, g_rng);
  Mat b = random_mat(4, 3, g_rng);
  Mat w13 = random_mat(1, 3, g_rng);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return sum(t, x[0]);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return weigh(t, mean_rows(t, x[0]), w13);
        }) < 1e-4);
  CHECK(max_rel_err({a}, [&](Tape& t, const std::vector<int>& x) {
          return l1_norm(t, x[0]);
        }) < 1e-4);
  CHECK(max_rel_err({a, b}, [&](Tape& t, const std::vector<int>& x) {
          return dot(t, x[0], x[1]);
        }) < 1e-4);
  CHECK(max_rel_err({col}, [&](Tape& t, const std::vector<int>& x) {
          return logsumexp_col(t, x[0]);
        }) < 1e-4);
}

TEST_CASE("straight-through passes gradients to the relaxation") {
  Mat soft = random_mat(4, 1, g_rng);
  Mat hard = Mat::Zero(4, 1);
  hard(1, 0) = 1.0;
  Mat w = random_mat(4, 1, g_rng);
  Tape t;
  int s = t.leaf(soft);
  int st = straight_through(t, s, hard);
  CHECK(t.val(st) == hard);  // forward is the hard value
  t.backward(sum(t, cmul(t, st, t.constant(w))));
  CHECK((t.grad(s) - w).norm() == doctest::Approx(0.0));
}

TEST_CASE("dropout identity at rate zero, inverted scaling otherwise") {
  Mat a = random_mat(6, 6, g_rng);
  std::mt19937_64 rng(7);
  Tape t;
  int x = t.leaf(a);
  int d0 = dropout(t, x, 0.0, rng);
  CHECK((t.val(d0) - a).norm() == doctest::Approx(0.0));

  // Surviving entries are scaled by 1/(1-rate); dropped entries are zero.
  int d = dropout(t, x, 0.5, rng);
  const Mat& dv = t.val(d);
  for (Eigen::Index i = 0; i < dv.size(); ++i) {
    double ratio = dv(i) / a(i);
    CHECK((std::abs(ratio) < 1e-12 || std::abs(ratio - 2.0) < 1e-12));
  }
}

TEST_CASE("cox loss gradient and hand values") {
  std::vector<double> times{1.0, 2.0, 3.0, 4.0, 4.0, 6.0};
  std::vector<int> events{1, 0, 1, 1, 1, 0};
  Mat risks = random_mat(6, 1, g_rng);
  CHECK(max_rel_err({risks}, [&](Tape& t, const std::vector<int>& x) {
          return cox_loss(t, x[0], times, events);
        }) < 1e-4);

  // Two uncensored patients with equal risks: -[r1 - log(2 e^r)] = log 2.
  Tape t;
  int r = t.constant(Mat::Zero(2, 1));
  int l = cox_loss(t, r, {1.0, 2.0}, {1, 1});
  CHECK(t.val(l)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Single uncensored patient: r - log exp(r) = 0.
  Tape t1;
  int one = t1.constant(Mat::Constant(1, 1, 1.3));
  CHECK(t1.val(cox_loss(t1, one, {5.0}, {1}))(0, 0) == doctest::Approx(0.0));

  // No events: defined as 0.
  Tape t2;
  int r2 = t2.constant(Mat::Constant(3, 1, 0.4));
  CHECK(t2.val(cox_loss(t2, r2, {1.0, 2.0, 3.0}, {0, 0, 0}))(0, 0) == 0.0);
}

TEST_CASE("cox loss is shift invariant to 1e-10") {
  std::vector<double> times{3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0};
  std::vector<int> events{1, 0, 1, 1, 0, 1, 1, 0};
  Mat risks = random_mat(8, 1, g_rng);
  Tape ta, tb;
  double la = ta.val(cox_loss(ta, ta.constant(risks), times, events))(0, 0);
  Mat shifted = risks.array() + 17.25;
  double lb = tb.val(cox_loss(tb, tb.constant(shifted), times, events))(0, 0);
  CHECK(std::abs(la - lb) < 1e-10);
}

TEST_CASE("repeated backward with zero_grad supports in-graph saliency") {
  Mat a = random_mat(2, 2, g_rng);
  Tape t;
  int x = t.leaf(a);
  int y = sum(t, cmul(t, x, x));
  t.backward(y);
  Mat g1 = t.grad(x);
  t.zero_grad();
  t.backward(y);
  CHECK((t.grad(x) - g1).norm() == doctest::Approx(0.0));
  CHECK((g1 - Mat(2.0 * a)).norm() == doctest::Approx(0.0));
}

TEST_CASE("adam and sgd steps are deterministic and move parameters") {
  std::mt19937_64 rng(3);
  ParamStore ps;
  ps.add("w", 2, 2, 0.5, rng);
  Mat before = ps.at("w");
  std::map<std::string, Mat> grads{{"w", Mat::Constant(2, 2, 1.0)}};
  ps.sgd_step(grads, 0.1, 0.9);
  CHECK((ps.at("w") - before).norm() > 0.0);

  ParamStore a1, a2;
  std::mt19937_64 r1(9), r2(9);
  a1.add("w", 2, 2, 0.5, r1);
  a2.add("w", 2, 2, 0.5, r2);
  a1.adam_step(grads, 1e-3);
  a2.adam_step(grads, 1e-3);
  CHECK((a1.at("w") - a2.at("w")).norm() == 0.0);
}

TEST_CASE("param store save/load roundtrip") {
  std::mt19937_64 rng(5);
  ParamStore ps;
  ps.add("alpha/w", 3, 2, 1.0, rng);
  ps.add_zero("beta/b", 1, 4);
  ps.save("/tmp/dcmil_params_test.bin", 42);
  ParamStore back;
  CHECK(back.load("/tmp/dcmil_params_test.bin") == 42);
  CHECK((back.at("alpha/w") - ps.at("alpha/w")).norm() == 0.0);
  CHECK(back.at("beta/b").cols() == 4);
}
