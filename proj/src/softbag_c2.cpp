#include "dcmil/softbag_c2.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dcmil::c2 {

using namespace dcmil::ad;

ParamStore init_c2_params(const RunConfig& cfg, std::mt19937_64& rng) {
  if (cfg.D != cfg.D_B)
    throw std::invalid_argument("init_c2_params: D must equal D_B (shared K1/K2 architecture)");
  ParamStore ps;
  int C = cfg.token_dim, D = cfg.D, Dh = cfg.D_hat, DB = cfg.D_B;
  auto sc = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  ps.add("c2/proj_W", C, D, sc(C), rng);
  ps.add_zero("c2/proj_b", 1, D);
  ps.add("c2/sel/score_W", D, 1, sc(D), rng);
  ps.add_zero("c2/sel/score_b", 1, 1);
  ps.add("c2/sel/W1", D, D, sc(D), rng);
  ps.add_zero("c2/sel/b1", 1, D);
  ps.add("c2/sel/W2", D, cfg.N_B, sc(D), rng);
  ps.add_zero("c2/sel/b2", 1, cfg.N_B);
  ps.add("c2/att/Wq", D, Dh, sc(D), rng);
  ps.add("c2/att/Wk", D, Dh, sc(D), rng);
  ps.add("c2/att/Wv", D, Dh, sc(D), rng);
  ps.add("c2/att/pool_W", Dh, DB, sc(Dh), rng);
  ps.add_zero("c2/att/pool_b", 1, DB);
  for (const std::string& k : {std::string("k1"), std::string("k2")}) {
    ps.add("c2/" + k + "/A1", DB, DB, sc(DB), rng);
    ps.add_zero("c2/" + k + "/a1", 1, DB);
    ps.add_zero("c2/" + k + "/A2", DB, 1);  // zero init -> mean aggregation at start
    ps.add_zero("c2/" + k + "/a2", 1, 1);
  }
  ps.add("c2/WL", DB, DB, sc(DB), rng);
  ps.add("c2/VL", DB, DB, sc(DB), rng);
  ps.add("c2/WS", DB, 1, sc(DB), rng);
  return ps;
}

GumbelTopK gumbel_topk(ad::Tape& t, int scores, int N_B, double temperature,
                       bool noise_on, std::mt19937_64* rng) {
  const Mat& S = t.val(scores);
  if (S.cols() != 1) throw std::invalid_argument("gumbel_topk: scores must be N×1");
  int N = static_cast<int>(S.rows());
  if (N_B > N) throw std::invalid_argument("gumbel_topk: N_B exceeds instance count");
  if (temperature <= 0.0) throw std::invalid_argument("gumbel_topk: temperature must be positive");

  int perturbed = scores;
  if (noise_on) {
    if (!rng) throw std::invalid_argument("gumbel_topk: noise requires an rng");
    Mat g(N, 1);
    for (int i = 0; i < N; ++i) {
      double u = std::max(uniform01(*rng), 1e-15);
      g(i, 0) = -std::log(-std::log(u));
    }
    perturbed = add_const(t, scores, g);
  }
  int u = scale(t, perturbed, 1.0 / temperature);

  // Hard top-k with lowest-index tie break.
  const Mat& U = t.val(u);
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return U(a, 0) > U(b, 0); });
  GumbelTopK out;
  out.selected.assign(order.begin(), order.begin() + N_B);
  std::sort(out.selected.begin(), out.selected.end());
  out.hard = Mat::Zero(N, 1);
  for (int i : out.selected) out.hard(i, 0) = 1.0;

  // Relaxed k-hot: successive softmax with log-mass exclusion.
  int logm = t.constant(Mat::Zero(N, 1));
  int khot = -1;
  for (int j = 0; j < N_B; ++j) {
    int a = softmax_cols(t, add(t, u, logm));
    khot = khot < 0 ? a : add(t, khot, a);
    if (j + 1 < N_B) {
      int ones = t.constant(Mat::Ones(N, 1));
      int rem = clamp_op(t, sub(t, ones, a), 1e-12, 1.0);
      logm = add(t, logm, log_op(t, rem));
    }
  }
  out.soft_node = khot;
  out.node = straight_through(t, khot, out.hard);
  return out;
}

int project_bag(ad::Tape& t, GraphParams& gp, const Mat& G, const RunConfig& cfg) {
  if (G.cols() != cfg.token_dim)
    throw std::invalid_argument("project_bag: instance representation width mismatch");
  int g = t.constant(G);
  return add_rowbcast(t, matmul(t, g, gp.use("c2/proj_W")), gp.use("c2/proj_b"));
}

int selection_scores(ad::Tape& t, GraphParams& gp, int E) {
  return add_rowbcast(t, matmul(t, E, gp.use("c2/sel/score_W")), gp.use("c2/sel/score_b"));
}

namespace {

int selection_with_indicator(ad::Tape& t, GraphParams& gp, int E, const Mat& hard,
                             int st_node, const RunConfig& cfg) {
  int h1 = tanh_op(t, add_rowbcast(t, matmul(t, E, gp.use("c2/sel/W1")), gp.use("c2/sel/b1")));
  int logits = add_rowbcast(t, matmul(t, h1, gp.use("c2/sel/W2")), gp.use("c2/sel/b2"));
  int masked;
  if (cfg.literal_indicator_softmax) {
    masked = colbcast_mul(t, logits, st_node);  // zeroed rows keep exp(0) weight
  } else {
    Mat barrier(t.val(logits).rows(), t.val(logits).cols());
    for (Eigen::Index i = 0; i < barrier.rows(); ++i)
      barrier.row(i).setConstant(hard(i, 0) > 0.5 ? 0.0 : -1e30);
    masked = add_const(t, logits, barrier);
  }
  int weights = softmax_cols(t, masked);  // instance axis, one column per slot
  int E_masked = colbcast_mul(t, E, st_node);
  return matmul(t, transpose(t, weights), E_masked);  // N_B x D
}

}  // namespace

int select_instances(ad::Tape& t, GraphParams& gp, int E, const GumbelTopK& sel,
                     const RunConfig& cfg) {
  double s = sel.hard.sum();
  if (std::lround(s) != cfg.N_B && std::lround(s) != sel.hard.rows())
    throw std::invalid_argument("select_instances: indicator does not sum to N_B");
  return selection_with_indicator(t, gp, E, sel.hard, sel.node, cfg);
}

int select_discarded(ad::Tape& t, GraphParams& gp, int E, const GumbelTopK& sel,
                     const RunConfig& cfg) {
  Mat comp_hard = Mat::Ones(sel.hard.rows(), 1) - sel.hard;
  int ones = t.constant(Mat::Ones(sel.hard.rows(), 1));
  int comp_st = sub(t, ones, sel.node);
  GumbelTopK comp;
  comp.hard = comp_hard;
  comp.node = comp_st;
  return selection_with_indicator(t, gp, E, comp_hard, comp_st, cfg);
}

AttentionOut constrained_self_attention(ad::Tape& t, GraphParams& gp, int E_sel,
                                        const RunConfig& cfg) {
  int Wq = gp.use("c2/att/Wq"), Wk = gp.use("c2/att/Wk"), Wv = gp.use("c2/att/Wv");
  int Q = matmul(t, E_sel, Wq);
  int K = matmul(t, E_sel, Wk);
  int V = matmul(t, E_sel, Wv);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.D_hat));
  int A = softmax_rows(t, scale(t, matmul(t, Q, transpose(t, K)), inv_sqrt));
  int attended = matmul(t, A, V);
  int pooled = mean_rows(t, attended);
  AttentionOut out;
  out.B = add_rowbcast(t, matmul(t, pooled, gp.use("c2/att/pool_W")), gp.use("c2/att/pool_b"));
  out.L_s = add(t, add(t, l1_norm(t, Wq), l1_norm(t, Wk)), l1_norm(t, Wv));
  return out;
}

int aggregate_K(ad::Tape& t, GraphParams& gp, int M, const std::string& which) {
  if (t.val(M).rows() == 0) throw std::logic_error("aggregate_K: empty collection");
  std::string p = "c2/" + which + "/";
  int h = tanh_op(t, add_rowbcast(t, matmul(t, M, gp.use(p + "A1")), gp.use(p + "a1")));
  int scores = add_rowbcast(t, matmul(t, h, gp.use(p + "A2")), gp.use(p + "a2"));
  int w = softmax_cols(t, scores);
  return matmul(t, transpose(t, w), M);
}

int log_bilinear_node(ad::Tape& t, GraphParams& gp, int B, int B_tilde, int B_hat,
                      int B_bar) {
  int WL = gp.use("c2/WL"), VL = gp.use("c2/VL");
  int a = matmul(t, matmul(t, B, WL), transpose(t, B_tilde));
  int b = matmul(t, matmul(t, B, WL), transpose(t, B_hat));
  int c = matmul(t, matmul(t, B, VL), transpose(t, B_bar));
  return add(t, add(t, a, b), c);
}

double log_bilinear(const Mat& B, const Mat& B_tilde, const Mat& B_hat, const Mat& B_bar,
                    const Mat& W_L, const Mat& V_L) {
  double e = (B * W_L * B_tilde.transpose())(0, 0) + (B * W_L * B_hat.transpose())(0, 0) +
             (B * V_L * B_bar.transpose())(0, 0);
  return std::exp(e);
}

int loss_tcl_from_logL(ad::Tape& t, const std::vector<int>& logL_pos,
                       const std::vector<std::vector<int>>& logL_neg) {
  std::size_t N = logL_pos.size();
  if (N == 0) throw std::invalid_argument("loss_tcl: empty batch");
  int total = -1;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<int> entries{logL_pos[n]};
    for (std::size_t i = 0; i < N; ++i)
      if (i != n) entries.push_back(logL_neg[n][i]);
    int lse = logsumexp_col(t, vconcat(t, entries));
    int term = sub(t, lse, logL_pos[n]);
    total = total < 0 ? term : add(t, total, term);
  }
  return scale(t, total, 1.0 / static_cast<double>(N));
}

int cosine_node(ad::Tape& t, int a, int b, int* zero_warnings) {
  double na = t.val(a).norm(), nb = t.val(b).norm();
  if (na < 1e-12 || nb < 1e-12) {
    if (zero_warnings) ++*zero_warnings;
    return t.scalar(0.0);
  }
  int d = dot(t, a, b);
  int ia = pow_op(t, dot(t, a, a), -0.5);
  int ib = pow_op(t, dot(t, b, b), -0.5);
  return cmul(t, cmul(t, d, ia), ib);
}

int loss_adc_term(ad::Tape& t, int B, int B_tilde, int B_hat, int B_bar, int B_under,
                  double kappa, int* zero_warnings) {
  if (kappa < 0.0) throw std::invalid_argument("loss_adc: kappa must be nonnegative");
  int c_under = cosine_node(t, B, B_under, zero_warnings);
  int c_tilde = cosine_node(t, B, B_tilde, zero_warnings);
  int c_hat = cosine_node(t, B, B_hat, zero_warnings);
  int c_bar = cosine_node(t, B, B_bar, zero_warnings);
  int hinge = relu(t, add(t, sub(t, c_under, c_tilde), t.scalar(kappa)));
  int one_a = t.scalar(1.0);
  int one_b = t.scalar(1.0);
  return add(t, hinge, add(t, sub(t, one_a, c_hat), sub(t, one_b, c_bar)));
}

int infer_risk(ad::Tape& t, GraphParams& gp, int B) {
  return matmul(t, B, gp.use("c2/WS"));
}

int loss_c2(ad::Tape& t, int cox, int tcl, int adc, int sparse, const RunConfig& cfg) {
  int out = cox;
  out = add(t, out, scale(t, tcl, cfg.beta_tcl));
  out = add(t, out, scale(t, adc, cfg.beta_adc));
  out = add(t, out, scale(t, sparse, cfg.beta_s));
  return out;
}

BagForward forward_bag(ad::Tape& t, GraphParams& gp, const Mat& G, const RunConfig& cfg,
                       bool noise_on, std::mt19937_64* rng) {
  BagForward out;
  out.E = project_bag(t, gp, G, cfg);
  int N = static_cast<int>(G.rows());
  int k = std::min(cfg.N_B, N);
  int scores = selection_scores(t, gp, out.E);
  out.sel = gumbel_topk(t, scores, k, cfg.gumbel_temperature, noise_on, rng);
  out.E_sel = select_instances(t, gp, out.E, out.sel, cfg);
  AttentionOut att = constrained_self_attention(t, gp, out.E_sel, cfg);
  out.B = att.B;
  out.L_s = att.L_s;
  out.risk = infer_risk(t, gp, out.B);
  if (k >= N) {
    out.degenerate_selection = true;  // nothing discarded: fall back to the bag mean
    out.B_bar = mean_rows(t, out.E);
  } else {
    int E_disc = select_discarded(t, gp, out.E, out.sel, cfg);
    out.B_bar = aggregate_K(t, gp, E_disc, "k2");
  }
  return out;
}

}  // namespace dcmil::c2
