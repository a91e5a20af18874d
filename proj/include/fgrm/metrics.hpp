#pragma once
// Calibration and segmentation-quality metrics on raw per-pixel arrays.
// Everything here is model-agnostic; report assembly lives with the
// experiment runner.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fgrm {

struct ReliabilityBin {
  double low = 0.0, high = 0.0;     // confidence interval of the bin
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  int64_t count = 0;
};

struct ReliabilityBins {
  int n_bins = 0;
  int64_t total = 0;
  std::vector<ReliabilityBin> bins;
};

// Equal-width confidence binning; confidence 1.0 lands in the last bin.
// Confidences must lie in [0, 1], arrays must be equal-length and non-empty.
ReliabilityBins reliability_bins(std::span<const double> confidence,
                                 std::span<const uint8_t> correct, int n_bins);

// Expected calibration error: sum_b (n_b / N) |accuracy_b - confidence_b|.
double ece(std::span<const double> confidence, std::span<const uint8_t> correct,
           int n_bins = 15);

struct MiEstimate {
  double nats = 0.0;
  // True when either variable is constant; the estimate is 0 by convention.
  bool degenerate = false;
};

// Plug-in mutual information between a continuous uncertainty value and the
// binary error indicator. The uncertainty axis is discretized into up to
// n_levels quantile cells (duplicate edges merged).
MiEstimate uncertainty_error_mi(std::span<const double> uncertainty,
                                std::span<const uint8_t> error, int n_levels = 10);

// Soerensen-Dice overlap of one class; both-empty is defined as 1.0.
double dice(std::span<const int> predicted, std::span<const int> truth, int class_id);

struct OodRatios {
  double pixel_ratio = 0.0;  // mean pixel uncertainty, corrupted / clean
  double box_ratio = 0.0;    // mean over maps of the max patch-mean, corrupted / clean
};

// Maps are row-major height x width, one entry per sample. patch must divide
// both height and width; the clean means must be positive.
OodRatios ood_ratios(const std::vector<std::vector<double>>& corrupted_maps,
                     const std::vector<std::vector<double>>& clean_maps, int height,
                     int width, int patch);

struct CalibrationReport {
  std::string split;
  std::string stage;  // checkpoint stage the report was computed from
  std::string config_hash;
  uint64_t seed = 0;
  int64_t n_images = 0;
  int64_t n_pixels = 0;

  double ece = 0.0;
  double mi_nats = 0.0;
  double mi_scaled = 0.0;  // nats * 100, the conventional reporting scale
  bool mi_degenerate = false;
  std::vector<double> dice_per_class;
  double dice_mean = 0.0;
  double aleatoric_correct_mean = 0.0;
  double aleatoric_incorrect_mean = 0.0;
  double epistemic_mean = 0.0;

  bool has_ood = false;
  double pixel_ratio = 0.0;
  double box_ratio = 0.0;

  ReliabilityBins bins;
};

// report.json / reliability.csv writers (IoError on failure).
void write_report_json(const std::string& path, const CalibrationReport& report);
void write_reliability_csv(const std::string& path, const ReliabilityBins& bins,
                           const std::string& config_hash, uint64_t seed);

// "%.17g" double formatting used by every CSV writer.
std::string fmt_double(double v);

}  // namespace fgrm
