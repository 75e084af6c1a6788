#pragma once

#include <random>
#include <string>
#include <vector>

#include "dcmil/core.hpp"

namespace dcmil::dataio {

struct TextureParams {
  double benign_mean = 0.35;
  double lesion_mean = 0.70;
  double stripe_amplitude = 0.15;
  double stripe_cycles = 6.0;  // cycles across the tile, magnification-consistent
  double noise_sd = 0.04;
};

struct SyntheticSpec {
  int n_patients = 60;  // tumor bags
  int n_normals = 8;
  int instances_min = 4;
  int instances_max = 8;
  double lesion_fraction_lo = 0.0;
  double lesion_fraction_hi = 0.8;
  // When nonempty, lesion fraction is drawn uniformly from these values
  // instead of the [lo,hi] interval (e.g. {0, 0.8} for a bimodal cohort).
  std::vector<double> lesion_fraction_values;
  double baseline_hazard = 0.01;      // events per month
  double hazard_multiplier = 40.0;    // per unit lesion fraction
  double censoring_rate = 0.2;
  TextureParams texture;
  int S = 3;
  int tile_side_finest = 128;
  std::uint64_t rng_seed = 7;

  void validate() const;
};

struct GroundTruthRow {
  std::string patient_id;
  double lesion_fraction = 0.0;
  double latent_event_time = 0.0;  // before censoring
  double recorded_time = 0.0;
  int event = 0;
};

struct Cohort {
  std::vector<Bag> bags;
  std::vector<GroundTruthRow> truth;
};

// Synthetic multi-magnification cohort with planted prognosis signal: survival
// times are exponential with rate baseline_hazard * hazard_multiplier^f where
// f is the bag's lesion fraction. Bit-reproducible under a fixed seed; each
// bag draws from an RNG stream derived from (seed, patient_id).
Cohort generate_cohort(const SyntheticSpec& spec);

// Single-instance generator, exposed for the tile-texture tests.
TilePyramid make_instance(const SyntheticSpec& spec, bool lesion, int row, int col,
                          std::mt19937_64& rng);

// Writes tiles as PNG plus manifest.csv and ground_truth.csv under out_dir.
void write_cohort(const Cohort& cohort, const std::string& out_dir, int S);

// Reads a manifest (header: patient_id,source,time_months,event,tile_paths...)
// and reconstructs bags. Tile paths are resolved relative to root_path. Rows
// of the same patient_id accumulate as instances.
std::vector<Bag> ingest_tiles(const std::string& root_path, const std::string& manifest_path);

std::vector<GroundTruthRow> read_ground_truth(const std::string& path);

}  // namespace dcmil::dataio
