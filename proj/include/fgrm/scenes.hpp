#pragma once
// Synthetic segmentation scenes with controllable boundary ambiguity.
//
// A scene is a Voronoi partition of the image plane: random sites each carry
// a class (site j gets class j mod K), every pixel takes the class of its
// nearest site, and pixels near a class boundary blend the two class
// intensities linearly (the "ambiguity band", where even the ideal predictor
// should be uncertain). Gaussian texture noise is added on top. Generation
// retries with a fresh site layout until every class covers a minimum
// fraction of the pixels.

#include <cstdint>
#include <string>
#include <vector>

namespace fgrm {

struct SceneSpec {
  int height = 32;
  int width = 32;
  int classes = 3;
  int channels = 1;
  int regions = 7;                // Voronoi site count, must be >= classes
  double ambiguity_width = 2.0;   // band thickness in pixels, 0 disables blending
  double noise = 0.20;            // texture noise stddev
  double min_class_fraction = 0.04;
  int count = 782;                // dataset size
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

enum class CorruptionKind { gaussian_noise, gaussian_blur };

const char* to_string(CorruptionKind kind);
CorruptionKind corruption_from_string(const std::string& name);  // throws ConfigError

struct SceneProvenance {
  uint64_t seed = 0;
  int index = 0;
  std::string corruption;  // empty for in-distribution samples
  int severity = 0;
};

struct SceneSample {
  int height = 0, width = 0, channels = 0;
  std::vector<double> image;   // [H, W, C] in [0, 1] before corruption
  std::vector<int> mask;       // [H, W] class labels
  std::vector<uint8_t> band;   // [H, W] 1 = inside the ambiguity band
  SceneProvenance prov;
};

SceneSample generate_scene(const SceneSpec& spec, int index);
std::vector<SceneSample> generate_dataset(const SceneSpec& spec);

// Applies a corruption at severity 1..5. The mask and band are kept, the
// provenance is tagged. Noise draws are shared across severities of the same
// sample, so the distance from the original is strictly increasing in
// severity. Blur uses a normalized separable Gaussian kernel with replicate
// padding, so constant images are fixed points.
SceneSample corrupt(const SceneSample& sample, CorruptionKind kind, int severity);

// Deterministic split: shuffle by seed, 20% (rounded up) held out as test,
// remaining 80% split 80/20 into train/val.
struct SplitIndices {
  std::vector<int> train, val, test;
};
SplitIndices split_indices(int count, uint64_t seed);

struct SplitDataset {
  std::vector<SceneSample> train, val, test;
};
SplitDataset split(const std::vector<SceneSample>& samples, uint64_t seed);

// Dataset directory layout: manifest.json plus images/NNNN.pgm (16-bit) and
// masks/NNNN.pgm (8-bit). The manifest records the spec, config hash, and
// per-sample rows (paths, split tag, provenance).
void write_dataset(const std::string& dir, const std::vector<SceneSample>& samples,
                   const SplitIndices& splits, const SceneSpec& spec,
                   const std::string& config_hash);

struct LoadedDataset {
  SceneSpec spec;
  std::string config_hash;
  std::vector<SceneSample> samples;
  std::vector<std::string> split_tags;  // "train" | "val" | "test" per sample
  SplitIndices splits;
};
LoadedDataset load_dataset(const std::string& manifest_path);

}  // namespace fgrm
