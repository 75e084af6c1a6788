#include "dcmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dcmil/encoder_c1.hpp"
#include "dcmil/plots.hpp"
#include "dcmil/softbag_c2.hpp"
#include "dcmil/survival.hpp"
#include "dcmil/tape.hpp"

namespace dcmil::trainer {

using namespace dcmil::ad;
namespace fs = std::filesystem;

namespace {

void shuffle_ids(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    if (j >= i) j = i - 1;
    std::swap(v[i - 1], v[j]);
  }
}

int bag_label(const Bag& b) {
  return b.survival.risk == RiskStatus::HIGH ? 1 : 0;
}

std::uint64_t ids_hash(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return fnv1a(joined);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

FoldPlan make_folds(const std::vector<Bag>& bags, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: need at least 2 folds");
  FoldPlan plan;
  plan.k = k;
  std::mt19937_64 rng(seed ^ fnv1a("folds"));
  // One stratum per risk status so every fold sees a similar class mix.
  for (RiskStatus st : {RiskStatus::HIGH, RiskStatus::LOW, RiskStatus::UNDEFINED}) {
    std::vector<std::string> stratum;
    for (const Bag& b : bags)
      if (b.source == Source::TUMOR && b.survival.risk == st)
        stratum.push_back(b.patient_id);
    std::sort(stratum.begin(), stratum.end());
    std::vector<std::size_t> order(stratum.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_ids(order, rng);
    int next = static_cast<int>(plan.assignments.size()) % k;
    for (std::size_t i : order) {
      plan.assignments[stratum[i]] = next;
      next = (next + 1) % k;
    }
  }
  return plan;
}

void assign_risk_labels(std::vector<Bag>& bags, double T_r) {
  for (Bag& b : bags)
    b.survival.risk = b.source == Source::TUMOR
                          ? risk_status(b.survival.time_months, b.survival.event, T_r)
                          : RiskStatus::UNDEFINED;
}

namespace {

struct LabeledInstance {
  const TilePyramid* tiles = nullptr;
  int y = 0;
};

// Hybrid loss graph for a batch of instances; returns the scalar node.
int c1_batch_loss(Tape& t, GraphParams& gp, const std::vector<LabeledInstance>& batch,
                  const RunConfig& cfg, int upto_s, double dropout_rate,
                  std::mt19937_64* rng, bool with_structural) {
  int acc = -1;
  for (const auto& inst : batch) {
    auto fw = c1::forward_instance(t, gp, *inst.tiles, cfg, upto_s, dropout_rate, rng);
    int l = -1;
    for (int s = 1; s <= upto_s; ++s) {
      int term = c1::loss_empirical_term(t, fw.p[static_cast<std::size_t>(s - 1)], inst.y);
      l = l < 0 ? term : add(t, l, term);
    }
    l = scale(t, l, 1.0 / upto_s);
    if (upto_s > 1 && cfg.beta_R != 0.0) {
      int r = -1;
      for (int s = 2; s <= upto_s; ++s) {
        int term = c1::loss_ranking_term(t, fw.p[static_cast<std::size_t>(s - 1)],
                                         fw.p[static_cast<std::size_t>(s - 2)], inst.y,
                                         cfg.eta);
        r = r < 0 ? term : add(t, r, term);
      }
      l = add(t, l, scale(t, r, cfg.beta_R));
    }
    acc = acc < 0 ? l : add(t, acc, l);
  }
  acc = scale(t, acc, 1.0 / static_cast<double>(batch.size()));
  if (with_structural && upto_s > 1 && cfg.beta_Omega != 0.0) {
    int omega = -1;
    for (int s = 2; s <= upto_s; ++s) {
      int term = c1::loss_structural(t, gp, s, cfg);
      omega = omega < 0 ? term : add(t, omega, term);
    }
    acc = add(t, acc, scale(t, omega, cfg.beta_Omega));
  }
  return acc;
}

double c1_instance_loss(ParamStore& ps, const LabeledInstance& inst, const RunConfig& cfg,
                        int upto_s) {
  Tape t;
  GraphParams gp(t, ps);
  std::vector<LabeledInstance> one{inst};
  int l = c1_batch_loss(t, gp, one, cfg, upto_s, 0.0, nullptr, false);
  return t.val(l)(0, 0);
}

double c1_eval_loss(ParamStore& ps, const std::vector<LabeledInstance>& insts,
                    const RunConfig& cfg, int upto_s) {
  double total = 0.0;
  for (const auto& inst : insts) total += c1_instance_loss(ps, inst, cfg, upto_s);
  return insts.empty() ? 0.0 : total / static_cast<double>(insts.size());
}

void c1_train_step(ParamStore& ps, const std::vector<LabeledInstance>& batch,
                   const RunConfig& cfg, int upto_s, double dropout_rate,
                   std::mt19937_64& rng) {
  Tape t;
  GraphParams gp(t, ps);
  int loss = c1_batch_loss(t, gp, batch, cfg, upto_s, dropout_rate, &rng, true);
  t.backward(loss);
  std::map<std::string, Mat> grads;
  gp.harvest(grads);
  ps.adam_step(grads, cfg.lr_c1);
}

double percentile25(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double pos = 0.25 * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

C1Output train_curriculum1(const std::vector<Bag>& train_bags,
                           const std::vector<Bag>& emit_bags, const RunConfig& cfg) {
  std::vector<const Bag*> labeled;
  bool has_high = false, has_low = false;
  for (const Bag& b : train_bags) {
    if (b.source != Source::TUMOR || b.survival.risk == RiskStatus::UNDEFINED) continue;
    labeled.push_back(&b);
    (b.survival.risk == RiskStatus::HIGH ? has_high : has_low) = true;
  }
  if (!has_high || !has_low)
    throw std::invalid_argument("train_curriculum1: need both HIGH and LOW bags");

  std::mt19937_64 rng(cfg.rng_seed ^ fnv1a("curriculum1"));
  C1Output out;
  out.params = c1::init_c1_params(cfg, rng);

  // Stratified train/validation split over labeled bags.
  std::vector<LabeledInstance> train_insts, val_insts;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<const Bag*> group;
    for (const Bag* b : labeled)
      if (bag_label(*b) == cls) group.push_back(b);
    std::vector<std::size_t> order(group.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_ids(order, rng);
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(group.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Bag* b = group[order[i]];
      auto& sink = (i < n_val && group.size() > 2) ? val_insts : train_insts;
      for (const TilePyramid& tp : b->instances) sink.push_back({&tp, cls});
    }
  }
  if (train_insts.empty()) throw std::invalid_argument("train_curriculum1: no instances");

  auto run_epoch = [&](const std::vector<LabeledInstance>& pool, int upto_s,
                       std::mt19937_64& r) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_ids(order, r);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_c1)) {
      std::vector<LabeledInstance> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_c1)); ++i)
        batch.push_back(pool[order[i]]);
      c1_train_step(out.params, batch, cfg, upto_s, cfg.dropout_rate, r);
    }
  };

  // Phase 1: branch 1 alone.
  for (int e = 0; e < cfg.epochs_pretrain; ++e) {
    run_epoch(train_insts, 1, rng);
    out.train_curve.push_back(c1_eval_loss(out.params, train_insts, cfg, 1));
  }

  // Phase 2: hierarchical transfer, then joint training of all branches.
  for (int s = 2; s <= cfg.S; ++s) c1::share_branch(out.params, 1, s, cfg);

  double lambda_lo = 0.0, lambda_hi = 0.0;
  if (cfg.self_paced && cfg.epochs_joint > 0) {
    std::vector<double> losses;
    for (const auto& inst : train_insts)
      losses.push_back(c1_instance_loss(out.params, inst, cfg, cfg.S));
    lambda_lo = percentile25(losses);
    lambda_hi = *std::max_element(losses.begin(), losses.end()) * 1.01 + 1e-9;
  }

  ParamStore best = out.params.clone();
  double best_val = val_insts.empty()
                        ? c1_eval_loss(out.params, train_insts, cfg, cfg.S)
                        : c1_eval_loss(out.params, val_insts, cfg, cfg.S);
  int stale = 0;
  for (int e = 0; e < cfg.epochs_joint; ++e) {
    std::vector<LabeledInstance> pool;
    if (cfg.self_paced) {
      double frac = cfg.epochs_joint > 1
                        ? static_cast<double>(e) / static_cast<double>(cfg.epochs_joint - 1)
                        : 1.0;
      double lambda = lambda_lo + frac * (lambda_hi - lambda_lo);
      std::vector<double> losses;
      for (const auto& inst : train_insts)
        losses.push_back(c1_instance_loss(out.params, inst, cfg, cfg.S));
      auto keep = c1::self_paced_select(losses, lambda);
      for (std::size_t i : keep) pool.push_back(train_insts[i]);
      if (pool.empty()) pool = train_insts;
    } else {
      pool = train_insts;
    }
    run_epoch(pool, cfg.S, rng);
    double tl = c1_eval_loss(out.params, train_insts, cfg, cfg.S);
    out.train_curve.push_back(tl);
    double vl = val_insts.empty() ? tl : c1_eval_loss(out.params, val_insts, cfg, cfg.S);
    if (vl < best_val - 1e-12) {
      best_val = vl;
      best = out.params.clone();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (cfg.epochs_joint > 0) out.params = best;
  out.best_val = best_val;

  out.reps = emit_representations(out.params, emit_bags, cfg);
  return out;
}

std::map<std::string, Mat> emit_representations(ParamStore& params,
                                                const std::vector<Bag>& bags,
                                                const RunConfig& cfg, double dropout_rate,
                                                std::mt19937_64* rng) {
  std::map<std::string, Mat> reps;
  for (const Bag& b : bags) {
    Mat G(static_cast<Eigen::Index>(b.instances.size()), cfg.token_dim);
    for (std::size_t i = 0; i < b.instances.size(); ++i) {
      Tape t;
      GraphParams gp(t, params);
      auto fw = c1::forward_instance(t, gp, b.instances[i], cfg, cfg.S, dropout_rate, rng);
      G.row(static_cast<Eigen::Index>(i)) = t.val(fw.g_final);
    }
    reps.emplace(b.patient_id, std::move(G));
  }
  return reps;
}

namespace {

struct C2Batch {
  std::vector<const Bag*> bags;  // tumor bags, batch order
};

// Builds the full Curriculum II loss graph over one batch. Validation calls
// use noise_on=false and rng=nullptr. Returns the scalar loss node, or -1
// when the batch cannot support the contrastive terms and has no events.
int c2_batch_loss(Tape& t, GraphParams& gp, const C2Batch& batch,
                  const std::map<std::string, Mat>& reps,
                  const std::vector<Bag>& normal_bags, const RunConfig& cfg,
                  bool noise_on, std::mt19937_64* rng, int* cosine_warnings) {
  using namespace dcmil::c2;
  std::vector<BagForward> fw;
  std::vector<int> anchors;  // indices with a defined risk class
  for (std::size_t i = 0; i < batch.bags.size(); ++i) {
    const Bag* b = batch.bags[i];
    fw.push_back(forward_bag(t, gp, reps.at(b->patient_id), cfg, noise_on, rng));
    if (b->survival.risk != RiskStatus::UNDEFINED) anchors.push_back(static_cast<int>(i));
  }

  // Normal-tissue reference: every normal bag through the identical pipeline.
  int B_under = -1;
  if (!normal_bags.empty()) {
    std::vector<int> rows;
    for (const Bag& nb : normal_bags)
      rows.push_back(forward_bag(t, gp, reps.at(nb.patient_id), cfg, noise_on, rng).B);
    B_under = aggregate_K(t, gp, vconcat(t, rows), "k1");
  }

  int n_high = 0, n_low = 0;
  for (int a : anchors)
    (batch.bags[static_cast<std::size_t>(a)]->survival.risk == RiskStatus::HIGH ? n_high
                                                                                : n_low)++;
  bool contrastive = B_under >= 0 && n_high >= 2 && n_low >= 2;

  int loss_tcl = -1, loss_adc = -1;
  if (contrastive) {
    std::vector<int> B_tilde(anchors.size()), B_hat(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      int n = anchors[a];
      RiskStatus cls = batch.bags[static_cast<std::size_t>(n)]->survival.risk;
      std::vector<int> all_others, class_others;
      for (std::size_t i = 0; i < batch.bags.size(); ++i) {
        if (static_cast<int>(i) == n) continue;
        all_others.push_back(fw[i].B);
        if (batch.bags[i]->survival.risk == cls) class_others.push_back(fw[i].B);
      }
      B_tilde[a] = aggregate_K(t, gp, vconcat(t, all_others), "k1");
      B_hat[a] = aggregate_K(t, gp, vconcat(t, class_others), "k1");
    }
    std::vector<int> logL_pos(anchors.size());
    std::vector<std::vector<int>> logL_neg(anchors.size(),
                                           std::vector<int>(anchors.size(), -1));
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      int n = anchors[a];
      logL_pos[a] = log_bilinear_node(t, gp, fw[static_cast<std::size_t>(n)].B, B_tilde[a],
                                      B_hat[a], fw[static_cast<std::size_t>(n)].B_bar);
      for (std::size_t bI = 0; bI < anchors.size(); ++bI) {
        if (bI == a) continue;
        int i = anchors[bI];
        logL_neg[a][bI] = log_bilinear_node(t, gp, fw[static_cast<std::size_t>(i)].B,
                                            B_under, B_hat[a],
                                            fw[static_cast<std::size_t>(n)].B_bar);
      }
    }
    loss_tcl = loss_tcl_from_logL(t, logL_pos, logL_neg);
    int adc = -1;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      int n = anchors[a];
      int term = loss_adc_term(t, fw[static_cast<std::size_t>(n)].B, B_tilde[a], B_hat[a],
                               fw[static_cast<std::size_t>(n)].B_bar, B_under, cfg.kappa,
                               cosine_warnings);
      adc = adc < 0 ? term : add(t, adc, term);
    }
    loss_adc = scale(t, adc, 1.0 / static_cast<double>(anchors.size()));
  }

  std::vector<int> risk_nodes;
  std::vector<double> times;
  std::vector<int> events;
  for (std::size_t i = 0; i < batch.bags.size(); ++i) {
    risk_nodes.push_back(fw[i].risk);
    times.push_back(batch.bags[i]->survival.time_months);
    events.push_back(batch.bags[i]->survival.event);
  }
  int cox = cox_loss(t, vconcat(t, risk_nodes), times, events);

  int total = cox;
  if (loss_tcl >= 0) total = add(t, total, scale(t, loss_tcl, cfg.beta_tcl));
  if (loss_adc >= 0) total = add(t, total, scale(t, loss_adc, cfg.beta_adc));
  total = add(t, total, scale(t, fw[0].L_s, cfg.beta_s));
  return total;
}

std::vector<C2Batch> deal_batches(const std::vector<const Bag*>& bags, int batch_size,
                                  std::mt19937_64& rng) {
  // Round-robin deal from per-class shuffled lists so each batch keeps a
  // balanced class mix; a trailing batch with fewer than 4 bags merges into
  // its predecessor.
  std::vector<const Bag*> ordered;
  std::vector<std::vector<const Bag*>> strata(3);
  for (const Bag* b : bags)
    strata[static_cast<std::size_t>(b->survival.risk)].push_back(b);
  for (auto& s : strata) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_ids(order, rng);
    std::vector<const Bag*> tmp;
    for (std::size_t i : order) tmp.push_back(s[i]);
    s = tmp;
  }
  std::size_t total = bags.size();
  std::size_t cursor[3] = {0, 0, 0};
  while (ordered.size() < total)
    for (int c : {1, 0, 2})
      if (cursor[c] < strata[static_cast<std::size_t>(c)].size())
        ordered.push_back(strata[static_cast<std::size_t>(c)][cursor[c]++]);
  std::vector<C2Batch> batches;
  for (std::size_t i = 0; i < ordered.size(); i += static_cast<std::size_t>(batch_size)) {
    C2Batch b;
    for (std::size_t j = i; j < std::min(ordered.size(), i + static_cast<std::size_t>(batch_size)); ++j)
      b.bags.push_back(ordered[j]);
    batches.push_back(std::move(b));
  }
  if (batches.size() > 1 && batches.back().bags.size() < 4) {
    auto tail = batches.back().bags;
    batches.pop_back();
    auto& prev = batches.back().bags;
    prev.insert(prev.end(), tail.begin(), tail.end());
  }
  return batches;
}

}  // namespace

C2Output train_curriculum2(const std::map<std::string, Mat>& reps,
                           const std::vector<Bag>& tumor_bags,
                           const std::vector<Bag>& normal_bags, const RunConfig& cfg) {
  if (tumor_bags.size() < 2)
    throw std::invalid_argument("train_curriculum2: need at least 2 tumor bags");
  std::mt19937_64 rng(cfg.rng_seed ^ fnv1a("curriculum2"));
  C2Output out;
  out.params = c2::init_c2_params(cfg, rng);

  // Stratified train/validation split.
  std::vector<const Bag*> train, val;
  for (RiskStatus st : {RiskStatus::HIGH, RiskStatus::LOW, RiskStatus::UNDEFINED}) {
    std::vector<const Bag*> group;
    for (const Bag& b : tumor_bags)
      if (b.survival.risk == st) group.push_back(&b);
    std::vector<std::size_t> order(group.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_ids(order, rng);
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(group.size()));
    for (std::size_t i = 0; i < order.size(); ++i)
      ((i < n_val && group.size() > 3) ? val : train).push_back(group[order[i]]);
  }

  auto eval_loss = [&](const std::vector<const Bag*>& set) {
    if (set.empty()) return 0.0;
    Tape t;
    GraphParams gp(t, out.params);
    C2Batch b;
    b.bags = set;
    int l = c2_batch_loss(t, gp, b, reps, normal_bags, cfg, false, nullptr,
                          &out.cosine_warnings);
    return t.val(l)(0, 0);
  };

  ParamStore best = out.params.clone();
  double best_val = eval_loss(val.empty() ? train : val);
  for (int e = 0; e < cfg.epochs_c2; ++e) {
    for (const C2Batch& batch : deal_batches(train, cfg.batch_c2, rng)) {
      Tape t;
      GraphParams gp(t, out.params);
      int loss = c2_batch_loss(t, gp, batch, reps, normal_bags, cfg, true, &rng,
                               &out.cosine_warnings);
      t.backward(loss);
      std::map<std::string, Mat> grads;
      gp.harvest(grads);
      out.params.sgd_step(grads, cfg.lr_c2, cfg.momentum_c2);
    }
    out.train_curve.push_back(eval_loss(train));
    double vl = eval_loss(val.empty() ? train : val);
    if (vl < best_val - 1e-12) {
      best_val = vl;
      best = out.params.clone();
    }
  }
  if (cfg.epochs_c2 > 0) out.params = best;
  out.best_val = best_val;
  return out;
}

double predict_risk(ParamStore& params, const Mat& G, const RunConfig& cfg) {
  Tape t;
  GraphParams gp(t, params);
  auto fw = c2::forward_bag(t, gp, G, cfg, false, nullptr);
  return t.val(fw.risk)(0, 0);
}

std::vector<IndicatorRow> selection_indicators(ParamStore& params, const Mat& G,
                                               const RunConfig& cfg) {
  Tape t;
  GraphParams gp(t, params);
  auto fw = c2::forward_bag(t, gp, G, cfg, false, nullptr);
  int E = fw.E;
  int scores = c2::selection_scores(t, gp, E);
  const Mat& s = t.val(scores);
  std::vector<IndicatorRow> rows;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    rows.push_back({static_cast<int>(i), s(i, 0),
                    fw.sel.hard(i, 0) > 0.5 ? 1 : 0});
  return rows;
}

std::string metrics_csv_text(const std::vector<EvalRow>& rows) {
  std::string text = "fold,dataset,c_index,logrank_p,n_patients\n";
  for (const auto& r : rows)
    text += r.fold + "," + r.dataset + "," + fmt(r.c_index) + "," + fmt(r.logrank_p) +
            "," + std::to_string(r.n_patients) + "\n";
  return text;
}

namespace {

survival::LogrankResult median_split_logrank(const std::vector<double>& times,
                                             const std::vector<int>& events,
                                             const std::vector<double>& risks) {
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  double median = sorted.size() % 2 == 1
                      ? sorted[sorted.size() / 2]
                      : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  survival::Group high, low;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    auto& g = risks[i] > median ? high : low;
    g.times.push_back(times[i]);
    g.events.push_back(events[i]);
  }
  if (high.times.empty() || low.times.empty()) return {0.0, 1.0};
  return survival::logrank_test(high, low);
}

}  // namespace

CrossvalResult crossval_run(const std::vector<Bag>& input_bags, const RunConfig& cfg,
                            const std::string& run_dir) {
  cfg.validate();
  std::vector<Bag> bags = input_bags;
  assign_risk_labels(bags, cfg.T_r);
  std::vector<Bag> tumor, normals;
  for (const Bag& b : bags) (b.source == Source::TUMOR ? tumor : normals).push_back(b);
  if (static_cast<int>(tumor.size()) < cfg.k_folds)
    throw std::invalid_argument("crossval_run: fewer tumor patients than folds");

  fs::create_directories(fs::path(run_dir) / "checkpoints");
  fs::create_directories(fs::path(run_dir) / "plots");
  fs::create_directories(fs::path(run_dir) / "exports");
  cfg.save((fs::path(run_dir) / "config.cfg").string());
  std::ofstream leakage(fs::path(run_dir) / "leakage.log");
  std::ofstream indicators(fs::path(run_dir) / "exports" / "indicators.csv");
  indicators << "fold,patient_id,instance_index,score,selected\n";

  CrossvalResult res;
  res.plan = make_folds(bags, cfg.k_folds, cfg.rng_seed);

  std::vector<double> pool_times, pool_risks;
  std::vector<int> pool_events;
  for (int f = 0; f < cfg.k_folds; ++f) {
    std::vector<Bag> train_tumor, heldout;
    for (const Bag& b : tumor)
      (res.plan.assignments.at(b.patient_id) == f ? heldout : train_tumor).push_back(b);
    int heldout_events = 0;
    for (const Bag& b : heldout) heldout_events += b.survival.event;
    if (heldout_events == 0)
      throw std::runtime_error("crossval_run: fold " + std::to_string(f) + " has no events");

    std::vector<std::string> train_ids;
    std::vector<Bag> train_all = train_tumor;
    train_all.insert(train_all.end(), normals.begin(), normals.end());
    for (const Bag& b : train_all) train_ids.push_back(b.patient_id);
    std::uint64_t th = ids_hash(train_ids);

    RunConfig fold_cfg = cfg;
    fold_cfg.rng_seed = cfg.rng_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(f + 1));

    leakage << "fold " << f << " stage c1 train_hash " << th << "\n";
    C1Output c1 = train_curriculum1(train_all, bags, fold_cfg);
    c1.params.save((fs::path(run_dir) / "checkpoints" /
                    ("c1_fold" + std::to_string(f) + ".bin")).string(),
                   cfg.hash());

    leakage << "fold " << f << " stage c2 train_hash " << th << "\n";
    C2Output c2 = train_curriculum2(c1.reps, train_tumor, normals, fold_cfg);
    c2.params.save((fs::path(run_dir) / "checkpoints" /
                    ("c2_fold" + std::to_string(f) + ".bin")).string(),
                   cfg.hash());

    std::vector<double> times, risks;
    std::vector<int> events;
    for (const Bag& b : heldout) {
      double r = predict_risk(c2.params, c1.reps.at(b.patient_id), cfg);
      res.heldout_risks[b.patient_id] = r;
      times.push_back(b.survival.time_months);
      events.push_back(b.survival.event);
      risks.push_back(r);
      pool_times.push_back(b.survival.time_months);
      pool_events.push_back(b.survival.event);
      pool_risks.push_back(r);
      for (const auto& row : selection_indicators(c2.params, c1.reps.at(b.patient_id), cfg))
        indicators << f << "," << b.patient_id << "," << row.instance_index << ","
                   << fmt(row.score) << "," << row.selected << "\n";
    }
    EvalRow row;
    row.fold = std::to_string(f);
    row.dataset = "heldout";
    row.c_index = survival::concordance_index(times, events, risks);
    row.logrank_p = median_split_logrank(times, events, risks).p_value;
    row.n_patients = static_cast<int>(heldout.size());
    res.rows.push_back(row);
  }

  res.pooled_c_index = survival::concordance_index(pool_times, pool_events, pool_risks);
  res.pooled_logrank_p = median_split_logrank(pool_times, pool_events, pool_risks).p_value;
  EvalRow pooled;
  pooled.fold = "all";
  pooled.dataset = "heldout";
  pooled.c_index = res.pooled_c_index;
  pooled.logrank_p = res.pooled_logrank_p;
  pooled.n_patients = static_cast<int>(pool_times.size());
  res.rows.push_back(pooled);

  std::ofstream metrics(fs::path(run_dir) / "metrics.csv", std::ios::binary);
  metrics << metrics_csv_text(res.rows);
  metrics.close();

  // Pooled KM plot split at the median predicted risk.
  {
    std::vector<double> sorted = pool_risks;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted.size() % 2 == 1
                        ? sorted[sorted.size() / 2]
                        : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    std::vector<double> t_hi, t_lo;
    std::vector<int> e_hi, e_lo;
    for (std::size_t i = 0; i < pool_risks.size(); ++i) {
      if (pool_risks[i] > median) {
        t_hi.push_back(pool_times[i]);
        e_hi.push_back(pool_events[i]);
      } else {
        t_lo.push_back(pool_times[i]);
        e_lo.push_back(pool_events[i]);
      }
    }
    if (!t_hi.empty() && !t_lo.empty()) {
      plots::write_km_svg((fs::path(run_dir) / "plots" / "km_pooled.svg").string(),
                          {{"high risk", survival::km_estimate(t_hi, e_hi)},
                           {"low risk", survival::km_estimate(t_lo, e_lo)}});
    }
  }
  return res;
}

std::map<std::string, std::vector<double>> mc_dropout_risks(
    ParamStore& c1_params, ParamStore& c2_params, const std::vector<Bag>& bags,
    const RunConfig& cfg, int passes, double dropout_rate) {
  std::map<std::string, std::vector<double>> out;
  for (int p = 0; p < passes; ++p) {
    std::mt19937_64 rng(cfg.rng_seed ^ fnv1a("mc" + std::to_string(p)));
    auto reps = emit_representations(c1_params, bags, cfg, dropout_rate, &rng);
    for (const Bag& b : bags)
      out[b.patient_id].push_back(predict_risk(c2_params, reps.at(b.patient_id), cfg));
  }
  return out;
}

}  // namespace dcmil::trainer
