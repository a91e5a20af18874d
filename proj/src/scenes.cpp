#include "fgrm/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fgrm/errors.hpp"
#include "fgrm/pgm.hpp"
#include "fgrm/rng.hpp"
#include "json.hpp"

namespace fgrm {

namespace {

constexpr uint64_t kSceneTag = 0x7363656eull;
constexpr uint64_t kCorruptTag = 0x636f7272ull;
constexpr uint64_t kSplitTag = 0x73706c69ull;
constexpr int kMaxAttempts = 64;

std::string pad_index(int index) {
  std::string s = std::to_string(index);
  while (s.size() < 4) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 4 || width < 4) {
    throw ConfigError("scenes.height/width must be >= 4, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (classes < 2) throw ConfigError("scenes.classes must be >= 2, got " + std::to_string(classes));
  if (channels != 1) {
    throw ConfigError("scenes.channels must be 1, got " + std::to_string(channels));
  }
  if (regions < classes) {
    throw ConfigError("scenes.regions must be >= classes, got " + std::to_string(regions));
  }
  if (ambiguity_width < 0.0) throw ConfigError("scenes.ambiguity_width must be >= 0");
  if (noise < 0.0) throw ConfigError("scenes.noise must be >= 0");
  if (min_class_fraction < 0.0 || min_class_fraction * classes >= 1.0) {
    throw ConfigError("scenes.min_class_fraction must be in [0, 1/classes)");
  }
  if (count < 5) throw ConfigError("scenes.count must be >= 5, got " + std::to_string(count));
}

const char* to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      return "gaussian_noise";
    case CorruptionKind::gaussian_blur:
      return "gaussian_blur";
  }
  throw ConfigError("unknown corruption kind");
}

CorruptionKind corruption_from_string(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (name == "gaussian_blur") return CorruptionKind::gaussian_blur;
  throw ConfigError("unknown corruption '" + name +
                    "' (expected gaussian_noise or gaussian_blur)");
}

SceneSample generate_scene(const SceneSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.count) {
    throw ConfigError("generate_scene: index " + std::to_string(index) + " outside [0," +
                      std::to_string(spec.count) + ")");
  }
  const int h = spec.height, w = spec.width, k = spec.classes;
  const int64_t pixels = static_cast<int64_t>(h) * w;
  const int64_t min_count = static_cast<int64_t>(spec.min_class_fraction * pixels);

  std::vector<double> mu(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) mu[c] = (c + 0.5) / k;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(mix_seed(spec.seed, {kSceneTag, static_cast<uint64_t>(index),
                                 static_cast<uint64_t>(attempt)}));
    std::vector<double> sx(spec.regions), sy(spec.regions);
    for (int j = 0; j < spec.regions; ++j) {
      sx[j] = rng.uniform(0.0, w);
      sy[j] = rng.uniform(0.0, h);
    }

    SceneSample sample;
    sample.height = h;
    sample.width = w;
    sample.channels = spec.channels;
    sample.image.resize(static_cast<size_t>(pixels) * spec.channels);
    sample.mask.resize(static_cast<size_t>(pixels));
    sample.band.resize(static_cast<size_t>(pixels));
    std::vector<int64_t> class_count(static_cast<size_t>(k), 0);

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double d1 = std::numeric_limits<double>::infinity();
        int own_site = 0;
        for (int j = 0; j < spec.regions; ++j) {
          const double dx = px - sx[j], dy = py - sy[j];
          const double d = std::sqrt(dx * dx + dy * dy);
          if (d < d1) {
            d1 = d;
            own_site = j;
          }
        }
        const int own = own_site % k;
        double d2 = std::numeric_limits<double>::infinity();
        int other = own;
        for (int j = 0; j < spec.regions; ++j) {
          if (j % k == own) continue;
          const double dx = px - sx[j], dy = py - sy[j];
          const double d = std::sqrt(dx * dx + dy * dy);
          if (d < d2) {
            d2 = d;
            other = j % k;
          }
        }
        const int64_t i = static_cast<int64_t>(y) * w + x;
        sample.mask[i] = own;
        ++class_count[own];
        const double gap = d2 - d1;
        double t = 1.0;
        if (spec.ambiguity_width > 0.0) {
          t = std::clamp(0.5 + gap / (2.0 * spec.ambiguity_width), 0.0, 1.0);
          sample.band[i] = gap < spec.ambiguity_width ? 1 : 0;
        } else {
          sample.band[i] = 0;
        }
        const double base = t * mu[own] + (1.0 - t) * mu[other];
        for (int c = 0; c < spec.channels; ++c) {
          sample.image[i * spec.channels + c] =
              std::clamp(base + spec.noise * rng.normal(), 0.0, 1.0);
        }
      }
    }

    bool balanced = true;
    for (int c = 0; c < k; ++c) balanced = balanced && class_count[c] >= min_count;
    if (balanced) {
      sample.prov.seed = spec.seed;
      sample.prov.index = index;
      return sample;
    }
  }
  throw NumericError("generate_scene: no balanced layout for index " + std::to_string(index) +
                     " after " + std::to_string(kMaxAttempts) + " attempts");
}

std::vector<SceneSample> generate_dataset(const SceneSpec& spec) {
  spec.validate();
  std::vector<SceneSample> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) out.push_back(generate_scene(spec, i));
  return out;
}

SceneSample corrupt(const SceneSample& sample, CorruptionKind kind, int severity) {
  if (severity < 1 || severity > 5) {
    throw ConfigError("corrupt: severity must be in [1,5], got " + std::to_string(severity));
  }
  SceneSample out = sample;
  out.prov.corruption = to_string(kind);
  out.prov.severity = severity;

  if (kind == CorruptionKind::gaussian_noise) {
    // One noise field per sample; severity only scales it, so the distance
    // to the original grows strictly with severity.
    Rng rng(mix_seed(sample.prov.seed,
                     {kCorruptTag, static_cast<uint64_t>(sample.prov.index), 0}));
    const double sigma = 0.05 * severity;
    for (auto& v : out.image) v += sigma * rng.normal();
    return out;
  }

  // gaussian_blur, separable with replicate padding
  const double sigma = 0.5 * severity;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kern(static_cast<size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int j = -radius; j <= radius; ++j) {
    kern[j + radius] = std::exp(-0.5 * (j * j) / (sigma * sigma));
    norm += kern[j + radius];
  }
  for (auto& v : kern) v /= norm;

  const int h = sample.height, w = sample.width, ch = sample.channels;
  std::vector<double> tmp(out.image.size());
  auto at = [&](const std::vector<double>& img, int y, int x, int c) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return img[(static_cast<size_t>(y) * w + x) * ch + c];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int j = -radius; j <= radius; ++j) acc += kern[j + radius] * at(sample.image, y, x + j, c);
        tmp[(static_cast<size_t>(y) * w + x) * ch + c] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int j = -radius; j <= radius; ++j) acc += kern[j + radius] * at(tmp, y + j, x, c);
        out.image[(static_cast<size_t>(y) * w + x) * ch + c] = acc;
      }
    }
  }
  return out;
}

SplitIndices split_indices(int count, uint64_t seed) {
  if (count < 5) throw ConfigError("split_indices: need at least 5 samples, got " +
                                   std::to_string(count));
  std::vector<int> perm(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) perm[i] = i;
  Rng rng(mix_seed(seed, {kSplitTag}));
  for (int i = count - 1; i >= 1; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(perm[i], perm[j]);
  }
  const int n_rem = static_cast<int>(0.8 * count);
  const int n_train = static_cast<int>(0.8 * n_rem);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_rem);
  s.test.assign(perm.begin() + n_rem, perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

SplitDataset split(const std::vector<SceneSample>& samples, uint64_t seed) {
  const SplitIndices idx = split_indices(static_cast<int>(samples.size()), seed);
  SplitDataset out;
  for (int i : idx.train) out.train.push_back(samples[static_cast<size_t>(i)]);
  for (int i : idx.val) out.val.push_back(samples[static_cast<size_t>(i)]);
  for (int i : idx.test) out.test.push_back(samples[static_cast<size_t>(i)]);
  return out;
}

void write_dataset(const std::string& dir, const std::vector<SceneSample>& samples,
                   const SplitIndices& splits, const SceneSpec& spec,
                   const std::string& config_hash) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw IoError("write_dataset: cannot create " + dir + ": " + ec.message());

  std::vector<std::string> tags(samples.size(), "train");
  for (int i : splits.val) tags[static_cast<size_t>(i)] = "val";
  for (int i : splits.test) tags[static_cast<size_t>(i)] = "test";

  nlohmann::json manifest;
  manifest["format"] = "fgrm-dataset";
  manifest["version"] = 1;
  manifest["config_hash"] = config_hash;
  manifest["spec"] = {{"height", spec.height},
                      {"width", spec.width},
                      {"classes", spec.classes},
                      {"channels", spec.channels},
                      {"regions", spec.regions},
                      {"ambiguity_width", spec.ambiguity_width},
                      {"noise", spec.noise},
                      {"min_class_fraction", spec.min_class_fraction},
                      {"count", spec.count},
                      {"seed", spec.seed}};
  manifest["samples"] = nlohmann::json::array();

  for (size_t i = 0; i < samples.size(); ++i) {
    const SceneSample& s = samples[i];
    const std::string name = pad_index(static_cast<int>(i)) + ".pgm";
    const std::string comment = "config_hash=" + config_hash +
                                " seed=" + std::to_string(s.prov.seed) +
                                " index=" + std::to_string(s.prov.index);
    std::vector<uint16_t> img16(s.image.size());
    for (size_t j = 0; j < s.image.size(); ++j) {
      img16[j] = static_cast<uint16_t>(
          std::lround(std::clamp(s.image[j], 0.0, 1.0) * 65535.0));
    }
    std::vector<uint8_t> mask8(s.mask.size());
    for (size_t j = 0; j < s.mask.size(); ++j) mask8[j] = static_cast<uint8_t>(s.mask[j]);
    write_pgm16((fs::path(dir) / "images" / name).string(), s.width, s.height, img16, comment);
    write_pgm8((fs::path(dir) / "masks" / name).string(), s.width, s.height, mask8, comment);
    manifest["samples"].push_back({{"index", s.prov.index},
                                   {"image", "images/" + name},
                                   {"mask", "masks/" + name},
                                   {"split", tags[i]},
                                   {"seed", s.prov.seed},
                                   {"corruption", s.prov.corruption},
                                   {"severity", s.prov.severity}});
  }

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("write_dataset: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write_dataset: manifest write failed in " + dir);
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("load_dataset: cannot open " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: malformed JSON in " + manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "fgrm-dataset") {
    throw IoError("load_dataset: " + manifest_path + " is not a dataset manifest");
  }

  LoadedDataset out;
  try {
    const auto& js = manifest.at("spec");
    out.spec.height = js.at("height").get<int>();
    out.spec.width = js.at("width").get<int>();
    out.spec.classes = js.at("classes").get<int>();
    out.spec.channels = js.at("channels").get<int>();
    out.spec.regions = js.at("regions").get<int>();
    out.spec.ambiguity_width = js.at("ambiguity_width").get<double>();
    out.spec.noise = js.at("noise").get<double>();
    out.spec.min_class_fraction = js.at("min_class_fraction").get<double>();
    out.spec.count = js.at("count").get<int>();
    out.spec.seed = js.at("seed").get<uint64_t>();
    out.config_hash = manifest.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: manifest missing fields: " + std::string(e.what()));
  }

  const fs::path root = fs::path(manifest_path).parent_path();
  for (const auto& row : manifest.at("samples")) {
    SceneSample s;
    std::string image_rel, mask_rel, tag;
    try {
      image_rel = row.at("image").get<std::string>();
      mask_rel = row.at("mask").get<std::string>();
      tag = row.at("split").get<std::string>();
      s.prov.index = row.at("index").get<int>();
      s.prov.seed = row.at("seed").get<uint64_t>();
      s.prov.corruption = row.at("corruption").get<std::string>();
      s.prov.severity = row.at("severity").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("load_dataset: malformed sample row: " + std::string(e.what()));
    }
    if (tag != "train" && tag != "val" && tag != "test") {
      throw IoError("load_dataset: unknown split tag '" + tag + "'");
    }
    const PgmImage img = read_pgm((root / image_rel).string());
    const PgmImage msk = read_pgm((root / mask_rel).string());
    if (img.width != out.spec.width || img.height != out.spec.height ||
        msk.width != out.spec.width || msk.height != out.spec.height) {
      throw IoError("load_dataset: sample " + image_rel + " does not match the spec size");
    }
    s.height = img.height;
    s.width = img.width;
    s.channels = 1;
    s.image.resize(img.pixels.size());
    const double scale = 1.0 / img.maxval;
    for (size_t j = 0; j < img.pixels.size(); ++j) s.image[j] = img.pixels[j] * scale;
    s.mask.resize(msk.pixels.size());
    for (size_t j = 0; j < msk.pixels.size(); ++j) {
      const int label = msk.pixels[j];
      if (label >= out.spec.classes) {
        throw IoError("load_dataset: mask " + mask_rel + " has label " + std::to_string(label) +
                      " >= classes " + std::to_string(out.spec.classes));
      }
      s.mask[j] = label;
    }
    s.band.assign(s.mask.size(), 0);
    const int i = static_cast<int>(out.samples.size());
    if (tag == "train") out.splits.train.push_back(i);
    if (tag == "val") out.splits.val.push_back(i);
    if (tag == "test") out.splits.test.push_back(i);
    out.samples.push_back(std::move(s));
    out.split_tags.push_back(tag);
  }
  if (out.samples.empty()) throw IoError("load_dataset: manifest has no samples");
  return out;
}

}  // namespace fgrm
