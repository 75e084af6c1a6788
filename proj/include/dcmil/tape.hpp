#pragma once

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <vector>

namespace dcmil::ad {

using Mat = Eigen::MatrixXd;

// Dynamic reverse-mode tape over dense matrices. A graph is rebuilt per
// forward pass; parameters enter as leaves and their gradients are read back
// after backward(). Multiple backward passes are allowed with zero_grad() in
// between (the saliency pass in Curriculum I relies on this).
class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(Tape&, const Node&)> pull;
  };

  int leaf(Mat v, bool needs_grad = true) {
    return emit(std::move(v), needs_grad, nullptr);
  }
  int constant(Mat v) { return leaf(std::move(v), false); }
  int scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

  const Mat& val(int id) const { return nodes_[id].value; }

  // Zero matrix of the node's shape when the node never received gradient.
  Mat grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad_live) return n.grad;
    return Mat::Zero(n.value.rows(), n.value.cols());
  }

  void backward(int root, const Mat& seed) {
    accumulate(root, seed);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad_live && n.needs_grad && n.pull) n.pull(*this, n);
    }
  }

  void backward(int root) {
    const Node& n = nodes_[root];
    backward(root, Mat::Ones(n.value.rows(), n.value.cols()));
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.grad_live = false;
      n.grad.resize(0, 0);
    }
  }

  int emit(Mat value, bool needs_grad, std::function<void(Tape&, const Node&)> pull) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (!n.grad_live) {
      n.grad = g;
      n.grad_live = true;
    } else {
      n.grad += g;
    }
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// Elementwise / linear algebra primitives. All return the new node id.
int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int cmul(Tape& t, int a, int b);          // elementwise, same shape
int colbcast_mul(Tape& t, int a, int v);  // rows of a (m×n) scaled by v (m×1)
int add_rowbcast(Tape& t, int a, int r);  // r (1×n) added to every row of a
int scale(Tape& t, int a, double s);
int add_const(Tape& t, int a, const Mat& c);
int matmul(Tape& t, int a, int b);
int transpose(Tape& t, int a);
int hconcat(Tape& t, const std::vector<int>& parts);
int vconcat(Tape& t, const std::vector<int>& parts);
int slice_cols(Tape& t, int a, int begin, int n);
int row(Tape& t, int a, int i);

int softmax_rows(Tape& t, int a);
int softmax_cols(Tape& t, int a);
int layer_norm_rows(Tape& t, int a, int gain, int bias, double eps = 1e-5);
int gelu(Tape& t, int a);
int tanh_op(Tape& t, int a);
int relu(Tape& t, int a);
int log_op(Tape& t, int a);
int exp_op(Tape& t, int a);
int pow_op(Tape& t, int a, double p);  // derivative guarded near zero base
int clamp_op(Tape& t, int a, double lo, double hi);

int sum(Tape& t, int a);        // 1×1
int mean_rows(Tape& t, int a);  // 1×n column means
int l1_norm(Tape& t, int a);    // 1×1, sign subgradient
int dot(Tape& t, int a, int b); // 1×1 sum of elementwise product
int logsumexp_col(Tape& t, int a);  // a is k×1 → 1×1, max-shifted

// Forward value is `hard`; gradient passes through to `soft` unchanged.
int straight_through(Tape& t, int soft, Mat hard);

// Inverted dropout; mask drawn from rng, identity when rate == 0.
int dropout(Tape& t, int a, double rate, std::mt19937_64& rng);

// Negative log partial likelihood of the Cox model (Breslow risk sets) over a
// column of per-patient risks. No events → 0 (empty product).
int cox_loss(Tape& t, int risks, const std::vector<double>& times,
             const std::vector<int>& events);

}  // namespace dcmil::ad
