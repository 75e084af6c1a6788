#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dcmil/dataio.hpp"
#include "dcmil/png_io.hpp"
#include "dcmil/survival.hpp"

using namespace dcmil;
using namespace dcmil::dataio;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.n_patients = 6;
  spec.n_normals = 2;
  spec.instances_min = 2;
  spec.instances_max = 3;
  spec.lesion_fraction_values = {0.0, 0.8};
  spec.S = 3;
  spec.tile_side_finest = 128;
  spec.rng_seed = 11;
  return spec;
}

// Survival-only spec for large Monte-Carlo draws: single tiny tile per bag.
SyntheticSpec mc_spec(int n) {
  SyntheticSpec spec;
  spec.n_patients = n;
  spec.n_normals = 0;
  spec.instances_min = 1;
  spec.instances_max = 1;
  spec.lesion_fraction_values = {0.0, 0.8};
  spec.S = 1;
  spec.tile_side_finest = 16;
  spec.rng_seed = 777;
  return spec;
}

}  // namespace

TEST_CASE("generation is bit-reproducible under a fixed seed") {
  SyntheticSpec spec = tiny_spec();
  Cohort a = generate_cohort(spec);
  Cohort b = generate_cohort(spec);
  REQUIRE(a.bags.size() == b.bags.size());
  for (std::size_t i = 0; i < a.bags.size(); ++i) {
    CHECK(a.bags[i].patient_id == b.bags[i].patient_id);
    CHECK(a.bags[i].survival.time_months == b.bags[i].survival.time_months);
    REQUIRE(a.bags[i].instances.size() == b.bags[i].instances.size());
    for (std::size_t j = 0; j < a.bags[i].instances.size(); ++j)
      for (std::size_t s = 0; s < 3; ++s)
        CHECK((a.bags[i].instances[j].tiles[s] - b.bags[i].instances[j].tiles[s]).norm() == 0.0);
  }
  spec.rng_seed = 12;
  Cohort c = generate_cohort(spec);
  CHECK(a.bags[0].survival.time_months != c.bags[0].survival.time_months);
}

TEST_CASE("cohort composition and censoring consistency") {
  Cohort cohort = generate_cohort(tiny_spec());
  int normals = 0;
  for (const Bag& b : cohort.bags)
    if (b.source == Source::NORMAL) {
      ++normals;
      CHECK(b.survival.risk == RiskStatus::UNDEFINED);
      CHECK(b.survival.event == 0);
    }
  CHECK(normals == 2);
  CHECK(cohort.bags.size() == 8);
  for (const GroundTruthRow& r : cohort.truth) {
    CHECK(r.recorded_time >= 0.0);
    CHECK(r.recorded_time <= r.latent_event_time + 1e-12);
    if (r.event == 1) CHECK(r.recorded_time == r.latent_event_time);
  }
}

TEST_CASE("tile textures separate classes and stay magnification-consistent") {
  SyntheticSpec spec = tiny_spec();
  std::mt19937_64 rng(5);
  TilePyramid lesion = make_instance(spec, true, 0, 0, rng);
  TilePyramid benign = make_instance(spec, false, 0, 0, rng);
  // Class statistic holds at every magnification.
  for (std::size_t s = 0; s < 3; ++s)
    CHECK(lesion.tiles[s].mean() > benign.tiles[s].mean() + 0.2);
  // The coarser magnification equals a 2x2 mean-pool of the finer one.
  for (std::size_t s = 0; s + 1 < 3; ++s) {
    const Image& coarse = lesion.tiles[s];
    const Image& fine = lesion.tiles[s + 1];
    double worst = 0.0;
    for (Eigen::Index i = 0; i < coarse.rows(); ++i)
      for (Eigen::Index j = 0; j < coarse.cols(); ++j)
        worst = std::max(worst, std::abs(coarse(i, j) -
                                         0.25 * (fine(2 * i, 2 * j) + fine(2 * i + 1, 2 * j) +
                                                 fine(2 * i, 2 * j + 1) + fine(2 * i + 1, 2 * j + 1))));
    CHECK(worst == 0.0);
  }
}

TEST_CASE("no planted signal yields a chance-level oracle") {
  SyntheticSpec spec = mc_spec(400);
  spec.lesion_fraction_values.clear();
  spec.lesion_fraction_lo = spec.lesion_fraction_hi = 0.0;
  spec.censoring_rate = 0.0;
  Cohort cohort = generate_cohort(spec);
  std::vector<double> times, risks;
  std::vector<int> events;
  for (std::size_t i = 0; i < cohort.truth.size(); ++i) {
    times.push_back(cohort.truth[i].recorded_time);
    events.push_back(cohort.truth[i].event);
    risks.push_back(cohort.truth[i].lesion_fraction);
  }
  double ci = survival::concordance_index(times, events, risks);
  CHECK(ci == doctest::Approx(0.5).epsilon(0.1));  // all risks tie at 0
}

TEST_CASE("bimodal planted signal scores above 0.9 on the Monte-Carlo oracle") {
  Cohort cohort = generate_cohort(mc_spec(1000));
  std::vector<double> times, risks;
  std::vector<int> events;
  for (const GroundTruthRow& r : cohort.truth) {
    times.push_back(r.recorded_time);
    events.push_back(r.event);
    risks.push_back(r.lesion_fraction);
  }
  CHECK(survival::concordance_index(times, events, risks) > 0.9);
}

TEST_CASE("write and ingest roundtrip") {
  fs::path dir = fs::temp_directory_path() / "dcmil_dataio_roundtrip";
  fs::remove_all(dir);
  SyntheticSpec spec = tiny_spec();
  Cohort cohort = generate_cohort(spec);
  write_cohort(cohort, dir.string(), spec.S);
  auto bags = ingest_tiles(dir.string(), (dir / "manifest.csv").string());
  REQUIRE(bags.size() == cohort.bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Bag* orig = nullptr;
    for (const Bag& b : cohort.bags)
      if (b.patient_id == bags[i].patient_id) orig = &b;
    REQUIRE(orig != nullptr);
    CHECK(bags[i].source == orig->source);
    CHECK(bags[i].survival.time_months == doctest::Approx(orig->survival.time_months));
    REQUIRE(bags[i].instances.size() == orig->instances.size());
    // 8-bit quantization bounds the roundtrip error per pixel.
    double worst = 0.0;
    for (std::size_t j = 0; j < bags[i].instances.size(); ++j)
      for (std::size_t s = 0; s < 3; ++s)
        worst = std::max(worst, (bags[i].instances[j].tiles[s] - orig->instances[j].tiles[s])
                                    .cwiseAbs()
                                    .maxCoeff());
    CHECK(worst <= 0.5 / 255.0 + 1e-12);
  }
  auto truth = read_ground_truth((dir / "ground_truth.csv").string());
  CHECK(truth.size() == cohort.truth.size());
  fs::remove_all(dir);
}

TEST_CASE("ingest rejects malformed inputs") {
  fs::path dir = fs::temp_directory_path() / "dcmil_dataio_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);

  {  // empty manifest -> empty list
    std::ofstream m(dir / "empty.csv");
    m << "patient_id,source,time_months,event,tile_paths...\n";
  }
  CHECK(ingest_tiles(dir.string(), (dir / "empty.csv").string()).empty());

  {  // tile side not divisible by 16
    write_png_gray((dir / "bad.png").string(), Image::Constant(100, 100, 0.5));
    std::ofstream m(dir / "bad_tile.csv");
    m << "patient_id,source,time_months,event,tile_paths...\n";
    m << "P0,TUMOR,10,1,bad.png\n";
  }
  CHECK_THROWS(ingest_tiles(dir.string(), (dir / "bad_tile.csv").string()));

  {  // inconsistent magnification level count
    write_png_gray((dir / "a.png").string(), Image::Constant(32, 32, 0.5));
    write_png_gray((dir / "b.png").string(), Image::Constant(64, 64, 0.5));
    std::ofstream m(dir / "bad_levels.csv");
    m << "patient_id,source,time_months,event,tile_paths...\n";
    m << "P0,TUMOR,10,1,a.png,b.png\n";
    m << "P0,TUMOR,10,1,a.png\n";
  }
  CHECK_THROWS(ingest_tiles(dir.string(), (dir / "bad_levels.csv").string()));

  CHECK_THROWS(ingest_tiles(dir.string(), (dir / "missing.csv").string()));
  fs::remove_all(dir);
}

TEST_CASE("spec validation") {
  SyntheticSpec spec = tiny_spec();
  spec.instances_min = 3;
  spec.instances_max = 2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.lesion_fraction_values = {1.5};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.tile_side_finest = 100;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
