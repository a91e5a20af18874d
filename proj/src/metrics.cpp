#include "fgrm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "fgrm/errors.hpp"
#include "json.hpp"

namespace fgrm {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ReliabilityBins reliability_bins(std::span<const double> confidence,
                                 std::span<const uint8_t> correct, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("reliability_bins: n_bins must be >= 1");
  if (confidence.empty() || confidence.size() != correct.size()) {
    throw std::invalid_argument("reliability_bins: need equal-length non-empty arrays, got " +
                                std::to_string(confidence.size()) + " and " +
                                std::to_string(correct.size()));
  }
  ReliabilityBins out;
  out.n_bins = n_bins;
  out.total = static_cast<int64_t>(confidence.size());
  out.bins.resize(static_cast<size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    out.bins[static_cast<size_t>(b)].low = static_cast<double>(b) / n_bins;
    out.bins[static_cast<size_t>(b)].high = static_cast<double>(b + 1) / n_bins;
  }
  std::vector<double> conf_sum(static_cast<size_t>(n_bins), 0.0);
  std::vector<int64_t> hit(static_cast<size_t>(n_bins), 0);
  for (size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::invalid_argument("reliability_bins: confidence " + fmt_double(c) +
                                  " outside [0,1] at index " + std::to_string(i));
    }
    const int b = std::min(n_bins - 1, static_cast<int>(c * n_bins));
    auto& bin = out.bins[static_cast<size_t>(b)];
    ++bin.count;
    conf_sum[static_cast<size_t>(b)] += c;
    hit[static_cast<size_t>(b)] += correct[i] ? 1 : 0;
  }
  for (int b = 0; b < n_bins; ++b) {
    auto& bin = out.bins[static_cast<size_t>(b)];
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[static_cast<size_t>(b)] / bin.count;
      bin.accuracy = static_cast<double>(hit[static_cast<size_t>(b)]) / bin.count;
    }
  }
  return out;
}

double ece(std::span<const double> confidence, std::span<const uint8_t> correct, int n_bins) {
  const ReliabilityBins rb = reliability_bins(confidence, correct, n_bins);
  double acc = 0.0;
  for (const auto& bin : rb.bins) {
    if (bin.count == 0) continue;
    acc += (static_cast<double>(bin.count) / rb.total) *
           std::abs(bin.accuracy - bin.mean_confidence);
  }
  return acc;
}

MiEstimate uncertainty_error_mi(std::span<const double> uncertainty,
                                std::span<const uint8_t> error, int n_levels) {
  if (n_levels < 2) throw std::invalid_argument("uncertainty_error_mi: n_levels must be >= 2");
  if (uncertainty.empty() || uncertainty.size() != error.size()) {
    throw std::invalid_argument("uncertainty_error_mi: need equal-length non-empty arrays");
  }
  const size_t n = uncertainty.size();

  bool any_err = false, all_err = true;
  for (uint8_t e : error) {
    any_err = any_err || (e != 0);
    all_err = all_err && (e != 0);
  }
  std::vector<double> sorted(uncertainty.begin(), uncertainty.end());
  std::sort(sorted.begin(), sorted.end());
  if (!any_err || all_err || sorted.front() == sorted.back()) {
    return {0.0, true};
  }

  // Quantile edges; a value's level is the number of edges <= value.
  std::vector<double> edges;
  for (int i = 1; i < n_levels; ++i) {
    const double e = sorted[(static_cast<size_t>(i) * n) / static_cast<size_t>(n_levels)];
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  const int levels = static_cast<int>(edges.size()) + 1;

  std::vector<int64_t> joint(static_cast<size_t>(levels) * 2, 0);
  for (size_t i = 0; i < n; ++i) {
    const int level = static_cast<int>(
        std::upper_bound(edges.begin(), edges.end(), uncertainty[i]) - edges.begin());
    ++joint[static_cast<size_t>(level) * 2 + (error[i] ? 1 : 0)];
  }

  std::vector<double> pu(static_cast<size_t>(levels), 0.0);
  double pe[2] = {0.0, 0.0};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int l = 0; l < levels; ++l) {
    for (int e = 0; e < 2; ++e) {
      const double p = joint[static_cast<size_t>(l) * 2 + e] * inv_n;
      pu[static_cast<size_t>(l)] += p;
      pe[e] += p;
    }
  }
  double mi = 0.0;
  for (int l = 0; l < levels; ++l) {
    for (int e = 0; e < 2; ++e) {
      const double p = joint[static_cast<size_t>(l) * 2 + e] * inv_n;
      if (p > 0.0) mi += p * std::log(p / (pu[static_cast<size_t>(l)] * pe[e]));
    }
  }
  return {std::max(0.0, mi), false};
}

double dice(std::span<const int> predicted, std::span<const int> truth, int class_id) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw std::invalid_argument("dice: need equal-length non-empty arrays, got " +
                                std::to_string(predicted.size()) + " and " +
                                std::to_string(truth.size()));
  }
  int64_t inter = 0, np = 0, ng = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == class_id;
    const bool g = truth[i] == class_id;
    inter += (p && g) ? 1 : 0;
    np += p ? 1 : 0;
    ng += g ? 1 : 0;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

OodRatios ood_ratios(const std::vector<std::vector<double>>& corrupted_maps,
                     const std::vector<std::vector<double>>& clean_maps, int height,
                     int width, int patch) {
  if (corrupted_maps.empty() || clean_maps.empty()) {
    throw std::invalid_argument("ood_ratios: both map sets must be non-empty");
  }
  if (patch < 1 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("ood_ratios: patch " + std::to_string(patch) +
                      " must divide " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  const size_t pixels = static_cast<size_t>(height) * width;
  auto mean_pixel = [&](const std::vector<std::vector<double>>& maps) {
    double acc = 0.0;
    for (const auto& m : maps) {
      if (m.size() != pixels) {
        throw std::invalid_argument("ood_ratios: map has " + std::to_string(m.size()) +
                                    " pixels, expected " + std::to_string(pixels));
      }
      for (double v : m) acc += v;
    }
    return acc / (static_cast<double>(pixels) * maps.size());
  };
  auto mean_box = [&](const std::vector<std::vector<double>>& maps) {
    double acc = 0.0;
    const double inv_patch = 1.0 / (static_cast<double>(patch) * patch);
    for (const auto& m : maps) {
      double best = -std::numeric_limits<double>::infinity();
      for (int by = 0; by < height; by += patch) {
        for (int bx = 0; bx < width; bx += patch) {
          double s = 0.0;
          for (int y = by; y < by + patch; ++y) {
            for (int x = bx; x < bx + patch; ++x) s += m[static_cast<size_t>(y) * width + x];
          }
          best = std::max(best, s * inv_patch);
        }
      }
      acc += best;
    }
    return acc / static_cast<double>(maps.size());
  };

  const double clean_pixel = mean_pixel(clean_maps);
  const double clean_box = mean_box(clean_maps);
  if (!(clean_pixel > 0.0) || !(clean_box > 0.0)) {
    throw NumericError("ood_ratios: clean uncertainty mean is not positive");
  }
  return {mean_pixel(corrupted_maps) / clean_pixel, mean_box(corrupted_maps) / clean_box};
}

void write_report_json(const std::string& path, const CalibrationReport& report) {
  nlohmann::json j;
  j["split"] = report.split;
  j["stage"] = report.stage;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["n_images"] = report.n_images;
  j["n_pixels"] = report.n_pixels;
  j["ece"] = report.ece;
  j["mi_nats"] = report.mi_nats;
  j["mi_scaled"] = report.mi_scaled;
  j["mi_degenerate"] = report.mi_degenerate;
  j["dice_per_class"] = report.dice_per_class;
  j["dice_mean"] = report.dice_mean;
  j["aleatoric_correct_mean"] = report.aleatoric_correct_mean;
  j["aleatoric_incorrect_mean"] = report.aleatoric_incorrect_mean;
  j["epistemic_mean"] = report.epistemic_mean;
  j["has_ood"] = report.has_ood;
  if (report.has_ood) {
    j["pixel_ratio"] = report.pixel_ratio;
    j["box_ratio"] = report.box_ratio;
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.bins.bins) {
    bins.push_back({{"low", b.low},
                    {"high", b.high},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy},
                    {"count", b.count}});
  }
  j["reliability"] = {{"n_bins", report.bins.n_bins}, {"total", report.bins.total},
                      {"bins", bins}};
  std::ofstream out(path);
  if (!out) throw IoError("write_report_json: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_report_json: write failed for " + path);
}

void write_reliability_csv(const std::string& path, const ReliabilityBins& bins,
                           const std::string& config_hash, uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("write_reliability_csv: cannot open " + path);
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out << "bin_low,bin_high,mean_confidence,accuracy,count\n";
  for (const auto& b : bins.bins) {
    out << fmt_double(b.low) << "," << fmt_double(b.high) << "," << fmt_double(b.mean_confidence)
        << "," << fmt_double(b.accuracy) << "," << b.count << "\n";
  }
  if (!out) throw IoError("write_reliability_csv: write failed for " + path);
}

}  // namespace fgrm
