#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dcmil/dataio.hpp"
#include "dcmil/encoder_c1.hpp"
#include "dcmil/plots.hpp"
#include "dcmil/png_io.hpp"
#include "dcmil/survival.hpp"
#include "dcmil/trainer.hpp"

namespace fs = std::filesystem;
using namespace dcmil;

namespace {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

dataio::SyntheticSpec parse_generator_spec(const std::string& config_path) {
  dataio::SyntheticSpec spec;
  spec.lesion_fraction_values = {0.0, 0.8};  // bimodal planted signal by default
  std::ifstream f(config_path);
  if (!f) throw ValidationError("cannot open config file: " + config_path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "gen_n_patients") spec.n_patients = std::stoi(val);
    else if (key == "gen_n_normals") spec.n_normals = std::stoi(val);
    else if (key == "gen_instances_min") spec.instances_min = std::stoi(val);
    else if (key == "gen_instances_max") spec.instances_max = std::stoi(val);
    else if (key == "gen_baseline_hazard") spec.baseline_hazard = std::stod(val);
    else if (key == "gen_hazard_multiplier") spec.hazard_multiplier = std::stod(val);
    else if (key == "gen_censoring_rate") spec.censoring_rate = std::stod(val);
    else if (key == "gen_seed") spec.rng_seed = std::stoull(val);
    else if (key == "gen_lesion_values") {
      spec.lesion_fraction_values.clear();
      std::istringstream is(val);
      std::string tok;
      while (std::getline(is, tok, ';'))
        if (!tok.empty()) spec.lesion_fraction_values.push_back(std::stod(tok));
    } else if (key == "S") spec.S = std::stoi(val);
    else if (key == "tile_side_finest") spec.tile_side_finest = std::stoi(val);
  }
  return spec;
}

std::vector<Bag> load_bags(const std::string& run_dir) {
  std::string data = (fs::path(run_dir) / "data").string();
  std::string manifest = (fs::path(data) / "manifest.csv").string();
  if (!fs::exists(manifest))
    throw ValidationError("no dataset at " + data + " (run generate-data first)");
  return dataio::ingest_tiles(data, manifest);
}

std::vector<Bag> load_labeled_bags(const std::string& run_dir, const RunConfig& cfg) {
  std::vector<Bag> bags = load_bags(run_dir);
  trainer::assign_risk_labels(bags, cfg.T_r);
  return bags;
}

std::uint64_t fold_seed(const RunConfig& cfg, int f) {
  return cfg.rng_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(f + 1));
}

void split_fold(const std::vector<Bag>& bags, const trainer::FoldPlan& plan, int f,
                std::vector<Bag>& train_tumor, std::vector<Bag>& heldout,
                std::vector<Bag>& normals) {
  for (const Bag& b : bags) {
    if (b.source == Source::NORMAL) normals.push_back(b);
    else if (plan.assignments.at(b.patient_id) == f) heldout.push_back(b);
    else train_tumor.push_back(b);
  }
}

void save_reps(const std::map<std::string, Eigen::MatrixXd>& reps,
               const std::string& path, std::uint64_t hash) {
  ParamStore store;
  for (const auto& [id, G] : reps)
    store.add_zero(id, static_cast<int>(G.rows()), static_cast<int>(G.cols())) = G;
  store.save(path, hash);
}

std::map<std::string, Eigen::MatrixXd> load_reps(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("missing representations: " + path);
  ParamStore store;
  store.load(path);
  return store.params();
}

std::string ckpt(const std::string& run_dir, const std::string& stem, int f) {
  return (fs::path(run_dir) / "checkpoints" / (stem + "_fold" + std::to_string(f) + ".bin"))
      .string();
}

std::vector<int> fold_list(const RunConfig& cfg, int fold_flag) {
  if (fold_flag >= 0) {
    if (fold_flag >= cfg.k_folds) throw ValidationError("--fold out of range");
    return {fold_flag};
  }
  std::vector<int> all;
  for (int f = 0; f < cfg.k_folds; ++f) all.push_back(f);
  return all;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 == 1 ? v[v.size() / 2]
                           : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcmil: dual-curriculum survival prediction from tile bags"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed_flag = -1;
  int fold_flag = -1;
  const char* env_dir = std::getenv("DCMIL_RUN_DIR");
  if (env_dir) out_dir = env_dir;
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--out", out_dir, "run directory (default: $DCMIL_RUN_DIR)");
  app.add_option("--seed", seed_flag, "override the config RNG seed");
  app.add_option("--fold", fold_flag, "restrict training to one fold");

  auto* cmd_gen = app.add_subcommand("generate-data", "write a synthetic cohort");
  auto* cmd_c1 = app.add_subcommand("train-c1", "train Curriculum I per fold");
  auto* cmd_c2 = app.add_subcommand("train-c2", "train Curriculum II per fold");
  auto* cmd_eval = app.add_subcommand("evaluate", "held-out metrics from checkpoints");
  auto* cmd_unc = app.add_subcommand("uncertainty", "MC-dropout uncertainty report");
  auto* cmd_cmp = app.add_subcommand("compare-normal", "tumor vs normal distances");
  auto* cmd_rep = app.add_subcommand("report", "summarize metrics and render figures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (out_dir.empty()) throw ValidationError("no output directory (--out or DCMIL_RUN_DIR)");
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
    if (seed_flag >= 0) cfg.rng_seed = static_cast<std::uint64_t>(seed_flag);
    cfg.validate();
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    fs::create_directories(fs::path(out_dir) / "plots");
    fs::create_directories(fs::path(out_dir) / "exports");

    if (cmd_gen->parsed()) {
      if (config_path.empty()) throw ValidationError("generate-data needs --config");
      dataio::SyntheticSpec spec = parse_generator_spec(config_path);
      if (seed_flag >= 0) spec.rng_seed = static_cast<std::uint64_t>(seed_flag);
      spec.validate();
      dataio::Cohort cohort = dataio::generate_cohort(spec);
      dataio::write_cohort(cohort, (fs::path(out_dir) / "data").string(), spec.S);
      cfg.save((fs::path(out_dir) / "config.cfg").string());
      std::cout << "wrote " << cohort.bags.size() << " bags under " << out_dir
                << "/data\n";
      return 0;
    }

    std::vector<Bag> bags = load_labeled_bags(out_dir, cfg);
    trainer::FoldPlan plan = trainer::make_folds(bags, cfg.k_folds, cfg.rng_seed);

    if (cmd_c1->parsed()) {
      for (int f : fold_list(cfg, fold_flag)) {
        std::vector<Bag> train_tumor, heldout, normals;
        split_fold(bags, plan, f, train_tumor, heldout, normals);
        std::vector<Bag> train_all = train_tumor;
        train_all.insert(train_all.end(), normals.begin(), normals.end());
        RunConfig fcfg = cfg;
        fcfg.rng_seed = fold_seed(cfg, f);
        trainer::C1Output c1 = trainer::train_curriculum1(train_all, bags, fcfg);
        c1.params.save(ckpt(out_dir, "c1", f), cfg.hash());
        save_reps(c1.reps, ckpt(out_dir, "reps", f), cfg.hash());
        std::cout << "fold " << f << ": curriculum I done, best val loss " << c1.best_val
                  << "\n";
      }
      return 0;
    }

    if (cmd_c2->parsed()) {
      for (int f : fold_list(cfg, fold_flag)) {
        auto reps = load_reps(ckpt(out_dir, "reps", f));
        std::vector<Bag> train_tumor, heldout, normals;
        split_fold(bags, plan, f, train_tumor, heldout, normals);
        RunConfig fcfg = cfg;
        fcfg.rng_seed = fold_seed(cfg, f);
        trainer::C2Output c2 = trainer::train_curriculum2(reps, train_tumor, normals, fcfg);
        c2.params.save(ckpt(out_dir, "c2", f), cfg.hash());
        std::cout << "fold " << f << ": curriculum II done, best val loss " << c2.best_val
                  << "\n";
      }
      return 0;
    }

    if (cmd_eval->parsed()) {
      std::vector<trainer::EvalRow> rows;
      std::vector<double> pool_times, pool_risks;
      std::vector<int> pool_events;
      for (int f = 0; f < cfg.k_folds; ++f) {
        if (!fs::exists(ckpt(out_dir, "c2", f)))
          throw ValidationError("missing checkpoint " + ckpt(out_dir, "c2", f) +
                                " (run train-c1 and train-c2 first)");
        auto reps = load_reps(ckpt(out_dir, "reps", f));
        ParamStore c2;
        c2.load(ckpt(out_dir, "c2", f));
        std::vector<Bag> train_tumor, heldout, normals;
        split_fold(bags, plan, f, train_tumor, heldout, normals);
        std::vector<double> times, risks;
        std::vector<int> events;
        for (const Bag& b : heldout) {
          times.push_back(b.survival.time_months);
          events.push_back(b.survival.event);
          risks.push_back(trainer::predict_risk(c2, reps.at(b.patient_id), cfg));
        }
        trainer::EvalRow row;
        row.fold = std::to_string(f);
        row.dataset = "heldout";
        row.c_index = survival::concordance_index(times, events, risks);
        survival::Group hi, lo;
        double med = median_of(risks);
        for (std::size_t i = 0; i < risks.size(); ++i) {
          auto& g = risks[i] > med ? hi : lo;
          g.times.push_back(times[i]);
          g.events.push_back(events[i]);
        }
        row.logrank_p = (hi.times.empty() || lo.times.empty())
                            ? 1.0
                            : survival::logrank_test(hi, lo).p_value;
        row.n_patients = static_cast<int>(heldout.size());
        rows.push_back(row);
        pool_times.insert(pool_times.end(), times.begin(), times.end());
        pool_events.insert(pool_events.end(), events.begin(), events.end());
        pool_risks.insert(pool_risks.end(), risks.begin(), risks.end());
      }
      trainer::EvalRow pooled;
      pooled.fold = "all";
      pooled.dataset = "heldout";
      pooled.c_index = survival::concordance_index(pool_times, pool_events, pool_risks);
      survival::Group hi, lo;
      double med = median_of(pool_risks);
      for (std::size_t i = 0; i < pool_risks.size(); ++i) {
        auto& g = pool_risks[i] > med ? hi : lo;
        g.times.push_back(pool_times[i]);
        g.events.push_back(pool_events[i]);
      }
      pooled.logrank_p = survival::logrank_test(hi, lo).p_value;
      pooled.n_patients = static_cast<int>(pool_times.size());
      rows.push_back(pooled);
      std::ofstream m(fs::path(out_dir) / "metrics.csv", std::ios::binary);
      m << trainer::metrics_csv_text(rows);
      plots::write_km_svg((fs::path(out_dir) / "plots" / "km_pooled.svg").string(),
                          {{"high risk", survival::km_estimate(hi.times, hi.events)},
                           {"low risk", survival::km_estimate(lo.times, lo.events)}});
      std::cout << "pooled C-index " << pooled.c_index << ", logrank p "
                << pooled.logrank_p << "\n";
      return 0;
    }

    if (cmd_unc->parsed()) {
      int f = fold_flag >= 0 ? fold_flag : 0;
      if (!fs::exists(ckpt(out_dir, "c2", f)))
        throw ValidationError("missing checkpoints for fold " + std::to_string(f));
      ParamStore c1, c2;
      c1.load(ckpt(out_dir, "c1", f));
      c2.load(ckpt(out_dir, "c2", f));
      std::vector<Bag> train_tumor, heldout, normals;
      split_fold(bags, plan, f, train_tumor, heldout, normals);
      auto mc = trainer::mc_dropout_risks(c1, c2, heldout, cfg, cfg.mc_passes,
                                          cfg.dropout_rate);
      std::vector<double> stds, means;
      std::vector<int> correct;
      std::vector<std::string> ids;
      for (const Bag& b : heldout) {
        const auto& r = mc.at(b.patient_id);
        double mu = 0.0;
        for (double v : r) mu += v;
        mu /= static_cast<double>(r.size());
        double var = 0.0;
        for (double v : r) var += (v - mu) * (v - mu);
        stds.push_back(std::sqrt(var / static_cast<double>(r.size())));
        means.push_back(mu);
        ids.push_back(b.patient_id);
      }
      double med = median_of(means);
      for (std::size_t i = 0; i < heldout.size(); ++i) {
        RiskStatus truth = heldout[i].survival.risk;
        int pred_high = means[i] > med ? 1 : 0;
        int ok = truth == RiskStatus::UNDEFINED
                     ? 1
                     : (pred_high == (truth == RiskStatus::HIGH ? 1 : 0) ? 1 : 0);
        correct.push_back(ok);
      }
      auto [thr, J] = survival::youden_threshold(stds, correct);
      std::ofstream u(fs::path(out_dir) / "exports" / "uncertainty.csv");
      u << "patient_id,mean_risk,std,correct,confident\n";
      for (std::size_t i = 0; i < ids.size(); ++i)
        u << ids[i] << "," << means[i] << "," << stds[i] << "," << correct[i] << ","
          << (stds[i] < thr ? 1 : 0) << "\n";
      plots::write_histogram_svg((fs::path(out_dir) / "plots" / "uncertainty.svg").string(),
                                 stds, std::max(1e-12, *std::max_element(stds.begin(), stds.end()) / 10.0),
                                 "MC-dropout risk std (fold " + std::to_string(f) + ")");
      std::cout << "youden threshold " << thr << " (J=" << J << ") over "
                << stds.size() << " patients\n";
      return 0;
    }

    if (cmd_cmp->parsed()) {
      int f = fold_flag >= 0 ? fold_flag : 0;
      auto reps = load_reps(ckpt(out_dir, "reps", f));
      std::vector<Eigen::MatrixXd> normal_rows, tumor_rows;
      Eigen::Index dim = 0;
      long n_norm = 0, n_tum = 0;
      for (const Bag& b : bags) {
        const auto& G = reps.at(b.patient_id);
        dim = G.cols();
        (b.source == Source::NORMAL ? n_norm : n_tum) += G.rows();
      }
      Eigen::MatrixXd ref(n_norm, dim), query(n_tum, dim);
      long in = 0, it = 0;
      for (const Bag& b : bags) {
        const auto& G = reps.at(b.patient_id);
        if (b.source == Source::NORMAL) {
          ref.middleRows(in, G.rows()) = G;
          in += G.rows();
        } else {
          query.middleRows(it, G.rows()) = G;
          it += G.rows();
        }
      }
      auto hm = survival::distance_heatmap(ref, query, 5.0);
      std::ofstream d(fs::path(out_dir) / "exports" / "distances.csv");
      d << "distance\n";
      for (double v : hm.distances) d << v << "\n";
      plots::write_histogram_svg((fs::path(out_dir) / "plots" / "distances.svg").string(),
                                 hm.distances, hm.bin_width,
                                 "tumor instance distance to normal-tissue mean");
      std::cout << "wrote " << hm.distances.size() << " distances\n";
      return 0;
    }

    if (cmd_rep->parsed()) {
      std::string metrics = (fs::path(out_dir) / "metrics.csv").string();
      if (!fs::exists(metrics)) throw ValidationError("no metrics.csv (run evaluate first)");
      std::ifstream m(metrics);
      std::cout << m.rdbuf();
      // Saliency overlays for the first tumor bag, fold-0 encoder.
      if (fs::exists(ckpt(out_dir, "c1", 0))) {
        ParamStore c1;
        c1.load(ckpt(out_dir, "c1", 0));
        for (const Bag& b : bags) {
          if (b.source != Source::TUMOR) continue;
          for (std::size_t i = 0; i < std::min<std::size_t>(2, b.instances.size()); ++i) {
            ad::Tape t;
            GraphParams gp(t, c1);
            auto fw = c1::forward_instance(t, gp, b.instances[i], cfg, cfg.S);
            for (std::size_t s = 1; s < fw.masks.size(); ++s) {
              const auto& rel = fw.masks[s].relevance;
              Image up = Image::Zero(64, 64);
              for (Eigen::Index r = 0; r < up.rows(); ++r)
                for (Eigen::Index c = 0; c < up.cols(); ++c)
                  up(r, c) = rel(r * rel.rows() / up.rows(), c * rel.cols() / up.cols());
              write_png_gray((fs::path(out_dir) / "plots" /
                              ("saliency_" + b.patient_id + "_i" + std::to_string(i) +
                               "_s" + std::to_string(s) + ".png"))
                                 .string(),
                             up);
            }
          }
          break;
        }
      }
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
