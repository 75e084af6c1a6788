#include "dcmil/dataio.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dcmil/params.hpp"
#include "dcmil/png_io.hpp"

namespace fs = std::filesystem;

namespace dcmil::dataio {

void SyntheticSpec::validate() const {
  if (n_patients < 1) throw std::invalid_argument("synthetic spec: n_patients >= 1 required");
  if (n_normals < 0) throw std::invalid_argument("synthetic spec: n_normals >= 0 required");
  if (instances_min < 1 || instances_max < instances_min)
    throw std::invalid_argument("synthetic spec: empty instance range");
  if (lesion_fraction_values.empty() && lesion_fraction_hi < lesion_fraction_lo)
    throw std::invalid_argument("synthetic spec: empty lesion fraction range");
  for (double f : lesion_fraction_values)
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("synthetic spec: lesion fraction outside [0,1]");
  if (baseline_hazard <= 0.0 || hazard_multiplier <= 0.0)
    throw std::invalid_argument("synthetic spec: hazards must be positive");
  if (censoring_rate < 0.0 || censoring_rate > 1.0)
    throw std::invalid_argument("synthetic spec: censoring_rate outside [0,1]");
  if (S < 1 || tile_side_finest % (kTokenSide << (S - 1)) != 0)
    throw std::invalid_argument("synthetic spec: tile pyramid incompatible with token side");
}

namespace {

Image downsample2(const Image& img) {
  Image out(img.rows() / 2, img.cols() / 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = 0.25 * (img(2 * i, 2 * j) + img(2 * i + 1, 2 * j) +
                          img(2 * i, 2 * j + 1) + img(2 * i + 1, 2 * j + 1));
  return out;
}

std::mt19937_64 bag_rng(std::uint64_t seed, const std::string& patient_id) {
  return std::mt19937_64(seed ^ fnv1a(patient_id));
}

double draw_exponential(std::mt19937_64& rng, double rate) {
  double u = uniform01(rng);
  if (u > 1.0 - 1e-15) u = 1.0 - 1e-15;
  return -std::log(1.0 - u) / rate;
}

}  // namespace

TilePyramid make_instance(const SyntheticSpec& spec, bool lesion, int row, int col,
                          std::mt19937_64& rng) {
  const TextureParams& tx = spec.texture;
  int side = spec.tile_side_finest;
  Image fine(side, side);
  double mean = lesion ? tx.lesion_mean : tx.benign_mean;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      double v = mean + tx.noise_sd * normal01(rng);
      if (lesion) {
        // stripes in tile-relative coordinates so the pattern survives
        // the 2x downsampling to coarser magnifications
        double x = static_cast<double>(j) / side;
        v += tx.stripe_amplitude * std::sin(6.283185307179586477 * tx.stripe_cycles * x);
      }
      fine(i, j) = std::min(1.0, std::max(0.0, v));
    }
  }
  TilePyramid pyr;
  pyr.row = row;
  pyr.col = col;
  pyr.tiles.assign(static_cast<std::size_t>(spec.S), Image());
  pyr.tiles.back() = std::move(fine);
  for (int s = spec.S - 2; s >= 0; --s)
    pyr.tiles[static_cast<std::size_t>(s)] = downsample2(pyr.tiles[static_cast<std::size_t>(s + 1)]);
  pyr.validate();
  return pyr;
}

Cohort generate_cohort(const SyntheticSpec& spec) {
  spec.validate();
  Cohort cohort;
  for (int p = 0; p < spec.n_patients + spec.n_normals; ++p) {
    bool normal = p >= spec.n_patients;
    std::ostringstream id;
    id << (normal ? "N" : "P") << std::setw(4) << std::setfill('0')
       << (normal ? p - spec.n_patients : p);
    Bag bag;
    bag.patient_id = id.str();
    bag.source = normal ? Source::NORMAL : Source::TUMOR;
    auto rng = bag_rng(spec.rng_seed, bag.patient_id);

    int span = spec.instances_max - spec.instances_min + 1;
    int n_inst = spec.instances_min + static_cast<int>(rng() % static_cast<std::uint64_t>(span));

    double f = 0.0;
    if (!normal) {
      if (!spec.lesion_fraction_values.empty()) {
        auto k = rng() % spec.lesion_fraction_values.size();
        f = spec.lesion_fraction_values[k];
      } else {
        f = spec.lesion_fraction_lo +
            (spec.lesion_fraction_hi - spec.lesion_fraction_lo) * uniform01(rng);
      }
    }

    for (int i = 0; i < n_inst; ++i) {
      bool lesion = !normal && uniform01(rng) < f;
      bag.instances.push_back(make_instance(spec, lesion, i / 4, i % 4, rng));
    }

    GroundTruthRow truth;
    truth.patient_id = bag.patient_id;
    truth.lesion_fraction = f;
    if (!normal) {
      double rate = spec.baseline_hazard * std::pow(spec.hazard_multiplier, f);
      truth.latent_event_time = draw_exponential(rng, rate);
      if (uniform01(rng) < spec.censoring_rate) {
        truth.recorded_time = truth.latent_event_time * uniform01(rng);
        truth.event = 0;
      } else {
        truth.recorded_time = truth.latent_event_time;
        truth.event = 1;
      }
      bag.survival.time_months = truth.recorded_time;
      bag.survival.event = truth.event;
    }
    bag.survival.risk = RiskStatus::UNDEFINED;  // assigned once T_r is known
    cohort.bags.push_back(std::move(bag));
    cohort.truth.push_back(std::move(truth));
  }
  return cohort;
}

void write_cohort(const Cohort& cohort, const std::string& out_dir, int S) {
  fs::create_directories(fs::path(out_dir) / "tiles");
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest under " + out_dir);
  manifest << "patient_id,source,time_months,event,tile_paths...\n";
  manifest.precision(17);

  for (const Bag& bag : cohort.bags) {
    fs::path dir = fs::path(out_dir) / "tiles" / bag.patient_id;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < bag.instances.size(); ++i) {
      manifest << bag.patient_id << "," << to_string(bag.source) << ","
               << bag.survival.time_months << "," << bag.survival.event;
      for (int s = 0; s < S; ++s) {
        std::ostringstream name;
        name << "i" << i << "_s" << (s + 1) << ".png";
        fs::path rel = fs::path("tiles") / bag.patient_id / name.str();
        write_png_gray((fs::path(out_dir) / rel).string(),
                       bag.instances[i].tiles[static_cast<std::size_t>(s)]);
        manifest << "," << rel.generic_string();
      }
      manifest << "\n";
    }
  }

  std::ofstream truth(fs::path(out_dir) / "ground_truth.csv");
  truth << "patient_id,lesion_fraction,latent_event_time,recorded_time,event\n";
  truth.precision(17);
  for (const GroundTruthRow& r : cohort.truth)
    truth << r.patient_id << "," << r.lesion_fraction << "," << r.latent_event_time << ","
          << r.recorded_time << "," << r.event << "\n";
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

std::vector<Bag> ingest_tiles(const std::string& root_path, const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot open manifest: " + manifest_path);
  std::string line;
  if (!std::getline(f, line)) return {};

  std::vector<Bag> bags;
  std::size_t levels = 0;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() < 5)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": expected patient_id,source,time,event and at least one tile");
    std::size_t n_paths = fields.size() - 4;
    if (levels == 0) levels = n_paths;
    if (n_paths != levels)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing magnification level");

    const std::string& pid = fields[0];
    Bag* bag = nullptr;
    for (Bag& b : bags)
      if (b.patient_id == pid) bag = &b;
    if (!bag) {
      Bag b;
      b.patient_id = pid;
      b.source = fields[1] == "NORMAL" ? Source::NORMAL : Source::TUMOR;
      b.survival.time_months = std::stod(fields[2]);
      b.survival.event = std::stoi(fields[3]);
      b.survival.risk = RiskStatus::UNDEFINED;
      bags.push_back(std::move(b));
      bag = &bags.back();
    }

    TilePyramid pyr;
    for (std::size_t s = 0; s < levels; ++s) {
      fs::path p = fs::path(root_path) / fields[4 + s];
      pyr.tiles.push_back(read_png_gray(p.string()));
    }
    pyr.validate();
    bag->instances.push_back(std::move(pyr));
  }
  return bags;
}

std::vector<GroundTruthRow> read_ground_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open ground truth: " + path);
  std::string line;
  std::getline(f, line);
  std::vector<GroundTruthRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != 5) throw std::runtime_error("malformed ground truth row: " + line);
    GroundTruthRow r;
    r.patient_id = fields[0];
    r.lesion_fraction = std::stod(fields[1]);
    r.latent_event_time = std::stod(fields[2]);
    r.recorded_time = std::stod(fields[3]);
    r.event = std::stoi(fields[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dcmil::dataio
