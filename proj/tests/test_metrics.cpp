#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "fgrm/errors.hpp"
#include "fgrm/metrics.hpp"

using fgrm::ece;
using fgrm::dice;

TEST_CASE("reliability bins and ece on hand-checked cases") {
  // two bins: [0, 0.5) and [0.5, 1]
  const std::vector<double> conf = {0.2, 0.9};
  const std::vector<uint8_t> correct = {0, 1};
  const fgrm::ReliabilityBins bins = fgrm::reliability_bins(conf, correct, 2);
  CHECK(bins.total == 2);
  CHECK(bins.bins[0].count == 1);
  CHECK(bins.bins[0].mean_confidence == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(bins.bins[0].accuracy == 0.0);
  CHECK(bins.bins[1].count == 1);
  CHECK(bins.bins[1].accuracy == 1.0);
  // ece = 0.5 |0 - 0.2| + 0.5 |1 - 0.9| = 0.15
  CHECK(ece(conf, correct, 2) == doctest::Approx(0.15).epsilon(1e-12));

  const std::vector<double> conf2 = {0.9, 0.8, 0.7, 0.65};
  const std::vector<uint8_t> corr2 = {1, 0, 1, 1};
  // all four fall in the upper of 2 bins: |3/4 - 0.7625| = 0.0125
  CHECK(ece(conf2, corr2, 2) == doctest::Approx(0.0125).epsilon(1e-12));

  // perfectly calibrated two-bin case
  const std::vector<double> conf3 = {0.75, 0.75, 0.75, 0.75};
  const std::vector<uint8_t> corr3 = {1, 1, 1, 0};
  CHECK(ece(conf3, corr3, 2) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("confidence 1.0 lands in the last bin") {
  const std::vector<double> conf = {1.0, 1.0};
  const std::vector<uint8_t> correct = {1, 1};
  const fgrm::ReliabilityBins bins = fgrm::reliability_bins(conf, correct, 15);
  CHECK(bins.bins[14].count == 2);
  CHECK(ece(conf, correct, 15) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("ece validates its inputs") {
  const std::vector<double> conf = {0.5, 1.2};
  const std::vector<uint8_t> correct = {1, 1};
  CHECK_THROWS_AS(ece(conf, correct, 10), std::invalid_argument);
  const std::vector<double> conf2 = {0.5};
  CHECK_THROWS_AS(ece(conf2, correct, 10), std::invalid_argument);
  const std::vector<double> empty_c;
  const std::vector<uint8_t> empty_e;
  CHECK_THROWS_AS(ece(empty_c, empty_e, 10), std::invalid_argument);
}

TEST_CASE("mutual information: frozen 2x2 joint example") {
  // joint over (uncertainty level, error): p(0,0)=0.4 p(0,1)=0.1 p(1,0)=0.1 p(1,1)=0.4
  std::vector<double> u;
  std::vector<uint8_t> e;
  const auto push = [&](double uu, uint8_t ee, int times) {
    for (int i = 0; i < times; ++i) {
      u.push_back(uu);
      e.push_back(ee);
    }
  };
  push(0.1, 0, 4);
  push(0.1, 1, 1);
  push(0.9, 0, 1);
  push(0.9, 1, 4);
  const fgrm::MiEstimate mi = fgrm::uncertainty_error_mi(u, e, 2);
  CHECK_FALSE(mi.degenerate);
  // 0.8 ln(1.6) + 0.2 ln(0.4) = 0.192744757021757...
  CHECK(mi.nats == doctest::Approx(0.1927447570217575).epsilon(1e-6));
}

TEST_CASE("mutual information of independent variables is near zero") {
  std::vector<double> u;
  std::vector<uint8_t> e;
  for (int i = 0; i < 400; ++i) {
    u.push_back(i % 2 == 0 ? 0.2 : 0.8);
    e.push_back(i % 4 < 2 ? 0 : 1);
  }
  const fgrm::MiEstimate mi = fgrm::uncertainty_error_mi(u, e, 2);
  CHECK_FALSE(mi.degenerate);
  CHECK(mi.nats < 1e-12);
  CHECK(mi.nats >= 0.0);
}

TEST_CASE("mutual information degenerates on constant inputs") {
  const std::vector<double> u = {0.5, 0.5, 0.5, 0.5};
  const std::vector<uint8_t> all_wrong = {1, 1, 1, 1};
  CHECK(fgrm::uncertainty_error_mi(u, all_wrong, 2).degenerate);
  const std::vector<double> varied = {0.1, 0.2, 0.3, 0.4};
  const std::vector<uint8_t> all_right = {0, 0, 0, 0};
  CHECK(fgrm::uncertainty_error_mi(varied, all_right, 2).degenerate);
}

TEST_CASE("dice coefficient conventions") {
  const std::vector<int> pred = {0, 1, 1, 2};
  const std::vector<int> truth = {0, 1, 2, 2};
  CHECK(dice(pred, truth, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(dice(pred, truth, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(dice(pred, truth, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // class absent from both: perfect score by convention
  CHECK(dice(pred, truth, 7) == doctest::Approx(1.0).epsilon(1e-15));
  // class present on one side only: zero
  const std::vector<int> none = {0, 0, 0, 0};
  CHECK(dice(none, truth, 1) == doctest::Approx(0.0).epsilon(1e-15));
  const std::vector<int> shorter = {0, 1};
  CHECK_THROWS_AS(dice(shorter, truth, 0), std::invalid_argument);
}

TEST_CASE("ood ratios: uniform doubling and hot-patch case") {
  // 4x4 maps, patch 2
  const std::vector<std::vector<double>> clean = {std::vector<double>(16, 0.2)};
  const std::vector<std::vector<double>> twice = {std::vector<double>(16, 0.4)};
  const fgrm::OodRatios r1 = fgrm::ood_ratios(twice, clean, 4, 4, 2);
  CHECK(r1.pixel_ratio == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r1.box_ratio == doctest::Approx(2.0).epsilon(1e-12));

  // hot top-left 2x2 block of 0.8 on a 0.2 background
  std::vector<double> hot(16, 0.2);
  hot[0] = hot[1] = hot[4] = hot[5] = 0.8;
  const std::vector<std::vector<double>> corrupted = {hot};
  const fgrm::OodRatios r2 = fgrm::ood_ratios(corrupted, clean, 4, 4, 2);
  // pooled mean: (4*0.8 + 12*0.2)/16 = 0.35 -> ratio 1.75
  CHECK(r2.pixel_ratio == doctest::Approx(1.75).epsilon(1e-12));
  // max patch mean 0.8 vs clean 0.2 -> 4
  CHECK(r2.box_ratio == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("ood ratios validate patch size and clean scale") {
  const std::vector<std::vector<double>> clean = {std::vector<double>(16, 0.2)};
  const std::vector<std::vector<double>> corr = {std::vector<double>(16, 0.4)};
  CHECK_THROWS_AS(fgrm::ood_ratios(corr, clean, 4, 4, 3), fgrm::ConfigError);
  const std::vector<std::vector<double>> zero = {std::vector<double>(16, 0.0)};
  CHECK_THROWS_AS(fgrm::ood_ratios(corr, zero, 4, 4, 2), fgrm::NumericError);
}

TEST_CASE("report json and reliability csv are written without timestamps") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path("test_tmp_metrics");
  fs::remove_all(dir);
  fs::create_directories(dir);

  fgrm::CalibrationReport rep;
  rep.split = "test";
  rep.stage = "pretrain";
  rep.config_hash = "deadbeefdeadbeef";
  rep.seed = 9;
  rep.n_images = 2;
  rep.n_pixels = 8;
  rep.ece = 0.125;
  rep.dice_per_class = {1.0, 0.5};
  rep.dice_mean = 0.75;
  const std::vector<double> conf = {0.2, 0.9};
  const std::vector<uint8_t> corr = {0, 1};
  rep.bins = fgrm::reliability_bins(conf, corr, 2);

  fgrm::write_report_json((dir / "report.json").string(), rep);
  fgrm::write_reliability_csv((dir / "reliability.csv").string(), rep.bins, rep.config_hash,
                              rep.seed);

  std::ifstream in(dir / "report.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"config_hash\"") != std::string::npos);
  CHECK(text.find("deadbeefdeadbeef") != std::string::npos);
  CHECK(text.find("\"ece\"") != std::string::npos);
  CHECK(text.find("time") == std::string::npos);
  CHECK(text.find("date") == std::string::npos);

  std::ifstream csv(dir / "reliability.csv");
  std::string line1, line2;
  std::getline(csv, line1);
  std::getline(csv, line2);
  CHECK(line1 == "# config_hash=deadbeefdeadbeef seed=9");
  CHECK(line2 == "bin_low,bin_high,mean_confidence,accuracy,count");
  fs::remove_all(dir);
}

TEST_CASE("fmt_double round trips doubles exactly") {
  for (double v : {0.1, 1.0 / 3.0, 12345.6789, 1e-300, 0.0}) {
    const std::string s = fgrm::fmt_double(v);
    CHECK(std::stod(s) == v);
  }
}
