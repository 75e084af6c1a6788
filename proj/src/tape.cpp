#include "dcmil/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace dcmil::ad {

namespace {

bool same_shape(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

int add(Tape& t, int a, int b) {
  if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("add: shape mismatch");
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(t.val(a) + t.val(b), ng, [a, b](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad);
    tp.accumulate(b, n.grad);
  });
}

int sub(Tape& t, int a, int b) {
  if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("sub: shape mismatch");
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(t.val(a) - t.val(b), ng, [a, b](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad);
    tp.accumulate(b, -n.grad);
  });
}

int cmul(Tape& t, int a, int b) {
  if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("cmul: shape mismatch");
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(t.val(a).cwiseProduct(t.val(b)), ng, [a, b](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.cwiseProduct(tp.val(b)));
    tp.accumulate(b, n.grad.cwiseProduct(tp.val(a)));
  });
}

int colbcast_mul(Tape& t, int a, int v) {
  const Mat& A = t.val(a);
  const Mat& V = t.val(v);
  if (V.cols() != 1 || V.rows() != A.rows())
    throw std::invalid_argument("colbcast_mul: v must be m×1 matching rows of a");
  Mat y = A.array().colwise() * V.col(0).array();
  bool ng = t.needs_grad(a) || t.needs_grad(v);
  return t.emit(std::move(y), ng, [a, v](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.array().colwise() * tp.val(v).col(0).array());
    tp.accumulate(v, n.grad.cwiseProduct(tp.val(a)).rowwise().sum());
  });
}

int add_rowbcast(Tape& t, int a, int r) {
  const Mat& A = t.val(a);
  const Mat& R = t.val(r);
  if (R.rows() != 1 || R.cols() != A.cols())
    throw std::invalid_argument("add_rowbcast: r must be 1×cols matching a");
  Mat y = A.rowwise() + R.row(0);
  bool ng = t.needs_grad(a) || t.needs_grad(r);
  return t.emit(std::move(y), ng, [a, r](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad);
    tp.accumulate(r, n.grad.colwise().sum());
  });
}

int scale(Tape& t, int a, double s) {
  return t.emit(t.val(a) * s, t.needs_grad(a), [a, s](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad * s);
  });
}

int add_const(Tape& t, int a, const Mat& c) {
  if (!same_shape(t.val(a), c)) throw std::invalid_argument("add_const: shape mismatch");
  return t.emit(t.val(a) + c, t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad);
  });
}

int matmul(Tape& t, int a, int b) {
  if (t.val(a).cols() != t.val(b).rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(t.val(a) * t.val(b), ng, [a, b](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad * tp.val(b).transpose());
    tp.accumulate(b, tp.val(a).transpose() * n.grad);
  });
}

int transpose(Tape& t, int a) {
  return t.emit(t.val(a).transpose(), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.transpose());
  });
}

int hconcat(Tape& t, const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: empty");
  Eigen::Index rows = t.val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (int p : parts) {
    if (t.val(p).rows() != rows) throw std::invalid_argument("hconcat: row mismatch");
    cols += t.val(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  for (int p : parts) {
    y.middleCols(off, t.val(p).cols()) = t.val(p);
    off += t.val(p).cols();
  }
  return t.emit(std::move(y), ng, [parts](Tape& tp, const Tape::Node& n) {
    Eigen::Index off = 0;
    for (int p : parts) {
      Eigen::Index w = tp.val(p).cols();
      tp.accumulate(p, n.grad.middleCols(off, w));
      off += w;
    }
  });
}

int vconcat(Tape& t, const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("vconcat: empty");
  Eigen::Index cols = t.val(parts[0]).cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (int p : parts) {
    if (t.val(p).cols() != cols) throw std::invalid_argument("vconcat: col mismatch");
    rows += t.val(p).rows();
    ng = ng || t.needs_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  for (int p : parts) {
    y.middleRows(off, t.val(p).rows()) = t.val(p);
    off += t.val(p).rows();
  }
  return t.emit(std::move(y), ng, [parts](Tape& tp, const Tape::Node& n) {
    Eigen::Index off = 0;
    for (int p : parts) {
      Eigen::Index h = tp.val(p).rows();
      tp.accumulate(p, n.grad.middleRows(off, h));
      off += h;
    }
  });
}

int slice_cols(Tape& t, int a, int begin, int n) {
  return t.emit(t.val(a).middleCols(begin, n), t.needs_grad(a),
                [a, begin, n](Tape& tp, const Tape::Node& nd) {
                  Mat g = Mat::Zero(tp.val(a).rows(), tp.val(a).cols());
                  g.middleCols(begin, n) = nd.grad;
                  tp.accumulate(a, g);
                });
}

int row(Tape& t, int a, int i) {
  return t.emit(t.val(a).row(i), t.needs_grad(a), [a, i](Tape& tp, const Tape::Node& n) {
    Mat g = Mat::Zero(tp.val(a).rows(), tp.val(a).cols());
    g.row(i) = n.grad;
    tp.accumulate(a, g);
  });
}

int softmax_rows(Tape& t, int a) {
  const Mat& X = t.val(a);
  Mat y(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::ArrayXd e = (X.row(i).array() - X.row(i).maxCoeff()).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    const Mat& p = n.value;
    Mat da(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double s = n.grad.row(i).dot(p.row(i));
      da.row(i) = p.row(i).cwiseProduct(n.grad.row(i) - Mat::Constant(1, p.cols(), s));
    }
    tp.accumulate(a, da);
  });
}

int softmax_cols(Tape& t, int a) {
  const Mat& X = t.val(a);
  Mat y(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Eigen::ArrayXd e = (X.col(j).array() - X.col(j).maxCoeff()).exp();
    y.col(j) = (e / e.sum()).matrix();
  }
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    const Mat& p = n.value;
    Mat da(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      double s = n.grad.col(j).dot(p.col(j));
      da.col(j) = p.col(j).cwiseProduct(n.grad.col(j) - Mat::Constant(p.rows(), 1, s));
    }
    tp.accumulate(a, da);
  });
}

int layer_norm_rows(Tape& t, int a, int gain, int bias, double eps) {
  const Mat& X = t.val(a);
  const Mat& G = t.val(gain);
  const Mat& B = t.val(bias);
  if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols())
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1×cols");
  Eigen::Index m = X.rows(), d = X.cols();
  Mat xhat(m, d);
  Eigen::VectorXd inv_sigma(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double mu = X.row(i).mean();
    double var = (X.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(i) = is;
    xhat.row(i) = (X.row(i).array() - mu).matrix() * is;
  }
  Mat y = (xhat.array().rowwise() * G.row(0).array()).matrix().rowwise() + B.row(0);
  bool ng = t.needs_grad(a) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.emit(std::move(y), ng,
                [a, gain, bias, xhat, inv_sigma](Tape& tp, const Tape::Node& n) {
                  const Mat& G = tp.val(gain);
                  Eigen::Index m = n.grad.rows(), d = n.grad.cols();
                  Mat da(m, d);
                  for (Eigen::Index i = 0; i < m; ++i) {
                    Eigen::RowVectorXd gh = n.grad.row(i).cwiseProduct(G.row(0));
                    double mg = gh.mean();
                    double mgx = gh.cwiseProduct(xhat.row(i)).mean();
                    da.row(i) =
                        inv_sigma(i) *
                        (gh.array() - mg - xhat.row(i).array() * mgx).matrix();
                  }
                  tp.accumulate(a, da);
                  tp.accumulate(gain, n.grad.cwiseProduct(xhat).colwise().sum());
                  tp.accumulate(bias, n.grad.colwise().sum());
                });
}

int gelu(Tape& t, int a) {
  const Mat& X = t.val(a);
  const double inv_sqrt2 = 0.7071067811865475244;
  Mat y = X.unaryExpr([&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    const double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 0.3989422804014326779;
    const Mat& X = tp.val(a);
    Mat d = X.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    tp.accumulate(a, n.grad.cwiseProduct(d));
  });
}

int tanh_op(Tape& t, int a) {
  Mat y = t.val(a).array().tanh();
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.cwiseProduct((1.0 - n.value.array().square()).matrix()));
  });
}

int relu(Tape& t, int a) {
  Mat y = t.val(a).cwiseMax(0.0);
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    Mat mask = (tp.val(a).array() > 0.0).cast<double>();
    tp.accumulate(a, n.grad.cwiseProduct(mask));
  });
}

int log_op(Tape& t, int a) {
  Mat y = t.val(a).array().log();
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.cwiseQuotient(tp.val(a)));
  });
}

int exp_op(Tape& t, int a) {
  Mat y = t.val(a).array().exp();
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.cwiseProduct(n.value));
  });
}

int pow_op(Tape& t, int a, double p) {
  Mat y = t.val(a).array().pow(p);
  return t.emit(std::move(y), t.needs_grad(a), [a, p](Tape& tp, const Tape::Node& n) {
    Mat d = tp.val(a).unaryExpr([p](double x) {
      if (std::abs(x) < 1e-18) return 0.0;  // sqrt-at-zero subgradient
      return p * std::pow(x, p - 1.0);
    });
    tp.accumulate(a, n.grad.cwiseProduct(d));
  });
}

int clamp_op(Tape& t, int a, double lo, double hi) {
  Mat y = t.val(a).cwiseMax(lo).cwiseMin(hi);
  return t.emit(std::move(y), t.needs_grad(a), [a, lo, hi](Tape& tp, const Tape::Node& n) {
    Mat mask = tp.val(a).unaryExpr([lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    tp.accumulate(a, n.grad.cwiseProduct(mask));
  });
}

int sum(Tape& t, int a) {
  return t.emit(Mat::Constant(1, 1, t.val(a).sum()), t.needs_grad(a),
                [a](Tape& tp, const Tape::Node& n) {
                  tp.accumulate(a, Mat::Constant(tp.val(a).rows(), tp.val(a).cols(), n.grad(0, 0)));
                });
}

int mean_rows(Tape& t, int a) {
  Eigen::Index m = t.val(a).rows();
  return t.emit(t.val(a).colwise().mean(), t.needs_grad(a),
                [a, m](Tape& tp, const Tape::Node& n) {
                  tp.accumulate(a, (n.grad / static_cast<double>(m)).replicate(m, 1));
                });
}

int l1_norm(Tape& t, int a) {
  return t.emit(Mat::Constant(1, 1, t.val(a).array().abs().sum()), t.needs_grad(a),
                [a](Tape& tp, const Tape::Node& n) {
                  Mat s = tp.val(a).unaryExpr(
                      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
                  tp.accumulate(a, n.grad(0, 0) * s);
                });
}

int dot(Tape& t, int a, int b) { return sum(t, cmul(t, a, b)); }

int logsumexp_col(Tape& t, int a) {
  const Mat& X = t.val(a);
  if (X.cols() != 1) throw std::invalid_argument("logsumexp_col: expects k×1");
  double m = X.maxCoeff();
  double s = (X.array() - m).exp().sum();
  double y = m + std::log(s);
  return t.emit(Mat::Constant(1, 1, y), t.needs_grad(a), [a, m, s](Tape& tp, const Tape::Node& n) {
    Mat w = ((tp.val(a).array() - m).exp() / s).matrix();
    tp.accumulate(a, n.grad(0, 0) * w);
  });
}

int straight_through(Tape& t, int soft, Mat hard) {
  if (!same_shape(t.val(soft), hard))
    throw std::invalid_argument("straight_through: shape mismatch");
  return t.emit(std::move(hard), t.needs_grad(soft), [soft](Tape& tp, const Tape::Node& n) {
    tp.accumulate(soft, n.grad);
  });
}

int dropout(Tape& t, int a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  const Mat& X = t.val(a);
  Mat mask(X.rows(), X.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      mask(i, j) = (rate > 0.0 && u < rate) ? 0.0 : 1.0 / keep;
    }
  return t.emit(X.cwiseProduct(mask), t.needs_grad(a), [a, mask](Tape& tp, const Tape::Node& n) {
    tp.accumulate(a, n.grad.cwiseProduct(mask));
  });
}

int cox_loss(Tape& t, int risks, const std::vector<double>& times,
             const std::vector<int>& events) {
  const Mat& R = t.val(risks);
  if (R.cols() != 1) throw std::invalid_argument("cox_loss: risks must be N×1");
  std::size_t N = static_cast<std::size_t>(R.rows());
  if (times.size() != N || events.size() != N)
    throw std::invalid_argument("cox_loss: array length mismatch");

  double loss = 0.0;
  Mat grad = Mat::Zero(static_cast<Eigen::Index>(N), 1);
  for (std::size_t n = 0; n < N; ++n) {
    if (events[n] != 1) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < N; ++j)
      if (times[j] >= times[n]) m = std::max(m, R(static_cast<Eigen::Index>(j), 0));
    double denom = 0.0;
    for (std::size_t j = 0; j < N; ++j)
      if (times[j] >= times[n]) denom += std::exp(R(static_cast<Eigen::Index>(j), 0) - m);
    loss -= R(static_cast<Eigen::Index>(n), 0) - (m + std::log(denom));
    grad(static_cast<Eigen::Index>(n), 0) -= 1.0;
    for (std::size_t j = 0; j < N; ++j)
      if (times[j] >= times[n])
        grad(static_cast<Eigen::Index>(j), 0) +=
            std::exp(R(static_cast<Eigen::Index>(j), 0) - m) / denom;
  }
  return t.emit(Mat::Constant(1, 1, loss), t.needs_grad(risks),
                [risks, grad](Tape& tp, const Tape::Node& n) {
                  tp.accumulate(risks, n.grad(0, 0) * grad);
                });
}

}  // namespace dcmil::ad
