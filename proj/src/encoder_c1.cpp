#include "dcmil/encoder_c1.hpp"

#include <cmath>
#include <stdexcept>

namespace dcmil::c1 {

using namespace dcmil::ad;

namespace {

constexpr double kProbEps = 1e-7;

std::string bname(int s) { return "b" + std::to_string(s); }

std::vector<std::string> block_suffixes() {
  return {"ln1_g", "ln1_b", "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
          "ln2_g", "ln2_b", "W1", "b1", "W2", "b2"};
}

}  // namespace

ParamStore init_c1_params(const RunConfig& cfg, std::mt19937_64& rng) {
  ParamStore ps;
  int d = cfg.token_dim;
  int hid = 4 * d;
  int patch_dim = kTokenSide * kTokenSide;
  for (int s = 1; s <= cfg.S; ++s) {
    std::string b = bname(s);
    double patch_scale = 1.0 / std::sqrt(static_cast<double>(patch_dim));
    ps.add(b + "/patch_W", patch_dim, d, patch_scale, rng);
    ps.add_zero(b + "/patch_b", 1, d);
    ps.add(b + "/pos", cfg.n_tokens(s), d, 0.02, rng);
    double wscale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 1; i <= cfg.n_blocks; ++i) {
      std::string blk = b + "/blk" + std::to_string(i) + "/";
      ps.add_const(blk + "ln1_g", 1, d, 1.0);
      ps.add_zero(blk + "ln1_b", 1, d);
      ps.add(blk + "Wq", d, d, wscale, rng);
      ps.add_zero(blk + "bq", 1, d);
      ps.add(blk + "Wk", d, d, wscale, rng);
      ps.add_zero(blk + "bk", 1, d);
      ps.add(blk + "Wv", d, d, wscale, rng);
      ps.add_zero(blk + "bv", 1, d);
      ps.add(blk + "Wo", d, d, wscale, rng);
      ps.add_zero(blk + "bo", 1, d);
      ps.add_const(blk + "ln2_g", 1, d, 1.0);
      ps.add_zero(blk + "ln2_b", 1, d);
      ps.add(blk + "W1", d, hid, wscale, rng);
      ps.add_zero(blk + "b1", 1, hid);
      ps.add(blk + "W2", hid, d, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
      ps.add_zero(blk + "b2", 1, d);
    }
    ps.add_const(b + "/agg/ln_g", 1, d, 1.0);
    ps.add_zero(b + "/agg/ln_b", 1, d);
    ps.add(b + "/agg/A1", d, hid, wscale, rng);
    ps.add_zero(b + "/agg/a1", 1, hid);
    ps.add(b + "/agg/A2", hid, 1, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
    ps.add_zero(b + "/agg/a2", 1, 1);
    ps.add(b + "/head/W", d, 2, wscale, rng);
    ps.add_zero(b + "/head/b", 1, 2);
  }
  return ps;
}

void share_branch(ParamStore& store, int from_s, int to_s, const RunConfig& cfg) {
  std::string from = bname(from_s) + "/";
  std::string to = bname(to_s) + "/";
  for (auto& [name, p] : store.params()) {
    if (name.rfind(to, 0) != 0) continue;
    std::string suffix = name.substr(to.size());
    const Mat& src = store.at(from + suffix);
    if (suffix == "pos" && src.rows() != p.rows()) continue;  // token counts differ
    p = src;
  }
  (void)cfg;
}

std::vector<std::string> block_param_names(int s, int upto, const RunConfig& cfg) {
  std::vector<std::string> names;
  upto = std::min(upto, cfg.n_blocks);
  for (int i = 1; i <= upto; ++i)
    for (const auto& suf : block_suffixes())
      names.push_back(bname(s) + "/blk" + std::to_string(i) + "/" + suf);
  return names;
}

Mat patch_tokens(const Image& tile) {
  if (tile.rows() != tile.cols() || tile.rows() % kTokenSide != 0)
    throw std::invalid_argument("patch_tokens: tile side must be a multiple of the token side");
  int tps = static_cast<int>(tile.rows()) / kTokenSide;
  Mat tokens(tps * tps, kTokenSide * kTokenSide);
  for (int ti = 0; ti < tps; ++ti)
    for (int tj = 0; tj < tps; ++tj) {
      int tok = ti * tps + tj;
      for (int pi = 0; pi < kTokenSide; ++pi)
        for (int pj = 0; pj < kTokenSide; ++pj)
          tokens(tok, pi * kTokenSide + pj) =
              tile(ti * kTokenSide + pi, tj * kTokenSide + pj);
    }
  return tokens;
}

int patchify_embed(ad::Tape& t, GraphParams& gp, const Image& tile, int s,
                   const RunConfig& cfg) {
  if (tile.rows() != cfg.tile_side(s))
    throw std::invalid_argument("patchify_embed: tile side does not match branch geometry");
  std::string b = bname(s);
  int raw = t.constant(patch_tokens(tile));
  int proj = matmul(t, raw, gp.use(b + "/patch_W"));
  proj = add_rowbcast(t, proj, gp.use(b + "/patch_b"));
  return add(t, proj, gp.use(b + "/pos"));
}

namespace {

int transformer_block(ad::Tape& t, GraphParams& gp, int z, const std::string& blk,
                      const RunConfig& cfg) {
  int d = cfg.token_dim;
  int dh = d / cfg.n_heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  int u = layer_norm_rows(t, z, gp.use(blk + "ln1_g"), gp.use(blk + "ln1_b"));
  int Q = add_rowbcast(t, matmul(t, u, gp.use(blk + "Wq")), gp.use(blk + "bq"));
  int K = add_rowbcast(t, matmul(t, u, gp.use(blk + "Wk")), gp.use(blk + "bk"));
  int V = add_rowbcast(t, matmul(t, u, gp.use(blk + "Wv")), gp.use(blk + "bv"));
  std::vector<int> heads;
  for (int h = 0; h < cfg.n_heads; ++h) {
    int Qh = slice_cols(t, Q, h * dh, dh);
    int Kh = slice_cols(t, K, h * dh, dh);
    int Vh = slice_cols(t, V, h * dh, dh);
    int A = softmax_rows(t, scale(t, matmul(t, Qh, transpose(t, Kh)), inv_sqrt_dh));
    heads.push_back(matmul(t, A, Vh));
  }
  int attn = cfg.n_heads == 1 ? heads[0] : hconcat(t, heads);
  int O = add_rowbcast(t, matmul(t, attn, gp.use(blk + "Wo")), gp.use(blk + "bo"));
  z = add(t, z, O);

  int v = layer_norm_rows(t, z, gp.use(blk + "ln2_g"), gp.use(blk + "ln2_b"));
  int h1 = gelu(t, add_rowbcast(t, matmul(t, v, gp.use(blk + "W1")), gp.use(blk + "b1")));
  int h2 = add_rowbcast(t, matmul(t, h1, gp.use(blk + "W2")), gp.use(blk + "b2"));
  return add(t, z, h2);
}

}  // namespace

int transformer_forward(ad::Tape& t, GraphParams& gp, int tokens, int s,
                        const RunConfig& cfg) {
  int z = tokens;
  for (int i = 1; i <= cfg.n_blocks; ++i)
    z = transformer_block(t, gp, z, bname(s) + "/blk" + std::to_string(i) + "/", cfg);
  return z;
}

int aggregate_tokens(ad::Tape& t, GraphParams& gp, int z, int g_prev, int s,
                     const RunConfig& cfg) {
  if (g_prev >= 0 && t.val(g_prev).cols() != cfg.token_dim)
    throw std::invalid_argument("aggregate_tokens: g_prev width mismatch");
  std::string b = bname(s) + "/agg/";
  int u = layer_norm_rows(t, z, gp.use(b + "ln_g"), gp.use(b + "ln_b"));
  int h = tanh_op(t, add_rowbcast(t, matmul(t, u, gp.use(b + "A1")), gp.use(b + "a1")));
  int scores = add_rowbcast(t, matmul(t, h, gp.use(b + "A2")), gp.use(b + "a2"));
  int attn = softmax_cols(t, scores);  // n_tokens x 1
  int g = matmul(t, transpose(t, attn), z);
  if (g_prev >= 0) g = add(t, g, g_prev);
  return g;
}

int classify(ad::Tape& t, GraphParams& gp, int g, int s, const RunConfig& cfg) {
  (void)cfg;
  std::string b = bname(s) + "/head/";
  int logits = add_rowbcast(t, matmul(t, g, gp.use(b + "W")), gp.use(b + "b"));
  return softmax_rows(t, logits);
}

SaliencyMask saliency_mask(const Mat& alpha, const Mat& z, double iota) {
  if (alpha.rows() != z.rows() || alpha.cols() != z.cols())
    throw std::invalid_argument("saliency_mask: alpha/z shape mismatch");
  Eigen::Index n_tok = z.rows();
  int tps = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_tok))));
  if (static_cast<Eigen::Index>(tps) * tps != n_tok)
    throw std::invalid_argument("saliency_mask: token count is not a square grid");

  Eigen::VectorXd raw(n_tok);
  for (Eigen::Index i = 0; i < n_tok; ++i)
    raw(i) = std::max(0.0, alpha.row(i).dot(z.row(i)));
  double mx = raw.maxCoeff();

  SaliencyMask m;
  m.relevance = Mat::Zero(tps, tps);
  m.values = Eigen::MatrixXi::Zero(tps, tps);
  if (mx > 0.0) {
    for (int ti = 0; ti < tps; ++ti)
      for (int tj = 0; tj < tps; ++tj) {
        double r = raw(ti * tps + tj) / mx;
        m.relevance(ti, tj) = r;
        m.values(ti, tj) = r >= iota ? 1 : 0;
      }
  }
  if (m.values.sum() == 0) m.values.setOnes();  // a blank mask would kill the input
  return m;
}

Image highlight_input(const Image& tile_next, const SaliencyMask& mask_prev) {
  Eigen::Index side = tile_next.rows();
  Eigen::Index grid = mask_prev.values.rows();
  if (grid == 0 || side % grid != 0)
    throw std::invalid_argument("highlight_input: mask grid does not tile the image");
  Eigen::Index block = side / grid;
  Image out(side, tile_next.cols());
  for (Eigen::Index i = 0; i < side; ++i)
    for (Eigen::Index j = 0; j < tile_next.cols(); ++j)
      out(i, j) = tile_next(i, j) * mask_prev.values(i / block, j / block);
  return out;
}

namespace {

// High-risk probability (column 1) clamped away from {0,1}.
int prob_high(ad::Tape& t, int p) {
  int ph = slice_cols(t, p, 1, 1);
  return clamp_op(t, ph, kProbEps, 1.0 - kProbEps);
}

}  // namespace

int loss_empirical_term(ad::Tape& t, int p, int y) {
  if (y != 0 && y != 1) throw std::invalid_argument("loss_empirical_term: label must be binary");
  int ph = prob_high(t, p);
  if (y == 1) return scale(t, log_op(t, ph), -1.0);
  int one = t.scalar(1.0);
  return scale(t, log_op(t, sub(t, one, ph)), -1.0);
}

int loss_ranking_term(ad::Tape& t, int p_s, int p_s_minus_1, int y, double eta) {
  int ph_s = prob_high(t, p_s);
  int ph_p = prob_high(t, p_s_minus_1);
  int margin;
  if (y == 1) {
    margin = sub(t, log_op(t, ph_s), log_op(t, ph_p));
  } else {
    int one_a = t.scalar(1.0);
    int one_b = t.scalar(1.0);
    margin = sub(t, log_op(t, sub(t, one_a, ph_s)), log_op(t, sub(t, one_b, ph_p)));
  }
  int inner = sub(t, t.scalar(eta), margin);
  return relu(t, inner);
}

int loss_structural(ad::Tape& t, GraphParams& gp, int s, const RunConfig& cfg) {
  if (s <= 1) throw std::invalid_argument("loss_structural: requires s > 1");
  auto cur = block_param_names(s, s - 1, cfg);
  auto prev = block_param_names(s - 1, s - 1, cfg);
  int ss = -1;
  for (std::size_t k = 0; k < cur.size(); ++k) {
    int d = sub(t, gp.use(cur[k]), gp.use(prev[k]));
    int sq = sum(t, cmul(t, d, d));
    ss = ss < 0 ? sq : add(t, ss, sq);
  }
  return pow_op(t, ss, 0.5);
}

std::vector<std::size_t> self_paced_select(const std::vector<double>& instance_losses,
                                           double lambda) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < instance_losses.size(); ++i)
    if (instance_losses[i] < lambda) idx.push_back(i);
  return idx;
}

InstanceForward forward_instance(ad::Tape& t, GraphParams& gp, const TilePyramid& inst,
                                 const RunConfig& cfg, int upto_s, double dropout_rate,
                                 std::mt19937_64* dropout_rng) {
  if (static_cast<int>(inst.tiles.size()) < upto_s)
    throw std::invalid_argument("forward_instance: instance has fewer magnifications than requested");
  InstanceForward out;
  out.masks.resize(static_cast<std::size_t>(upto_s));
  int g_prev = -1;
  Image current;
  for (int s = 1; s <= upto_s; ++s) {
    const Image& tile = inst.tiles[static_cast<std::size_t>(s - 1)];
    if (s == 1) current = tile;  // Eq.(5) passes branch 1 through unchanged
    int tokens = patchify_embed(t, gp, current, s, cfg);
    int z = transformer_forward(t, gp, tokens, s, cfg);
    int g = aggregate_tokens(t, gp, z, g_prev, s, cfg);
    int g_for_head = g;
    if (dropout_rate > 0.0) {
      if (!dropout_rng) throw std::invalid_argument("forward_instance: dropout needs an rng");
      g_for_head = dropout(t, g, dropout_rate, *dropout_rng);
    }
    int p = classify(t, gp, g_for_head, s, cfg);
    out.z.push_back(z);
    out.p.push_back(p);
    g_prev = g;
    out.g_final = g;

    if (s < upto_s) {
      // gradCAM pass: gradient of the high-risk probability wrt this
      // branch's tokens, then clear gradients before any loss backward.
      Mat seed = Mat::Zero(1, 2);
      seed(0, 1) = 1.0;
      t.backward(p, seed);
      Mat alpha = t.grad(z);
      t.zero_grad();
      SaliencyMask mask = saliency_mask(alpha, t.val(z), cfg.iota);
      current = highlight_input(inst.tiles[static_cast<std::size_t>(s)], mask);
      out.masks[static_cast<std::size_t>(s)] = std::move(mask);
    }
  }
  return out;
}

}  // namespace dcmil::c1
