#include "fgrm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fgrm/errors.hpp"
#include "json.hpp"

namespace fgrm {

namespace {

constexpr char kMagic[8] = {'F', 'G', 'R', 'M', 'C', 'K', 'P', '1'};

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const EvidentialModel& model,
                     const CheckpointMeta& meta) {
  const ModelConfig& mc = model.config();
  nlohmann::json header;
  header["model"] = {{"classes", mc.classes},     {"height", mc.height},
                     {"width", mc.width},         {"in_channels", mc.in_channels},
                     {"widths", mc.widths},       {"kernel", mc.kernel}};
  header["config_hash"] = meta.config_hash;
  header["seed"] = meta.seed;
  header["stage"] = meta.stage;
  header["params"] = nlohmann::json::array();
  for (const auto& [name, tensor] : model.params()) {
    header["params"].push_back({{"name", name}, {"shape", tensor.shape()}});
  }
  const std::string header_str = header.dump();

  std::string payload;
  payload.reserve(16 + header_str.size() + static_cast<size_t>(model.params().total_size()) * 8);
  payload.append(kMagic, sizeof(kMagic));
  const uint32_t len = static_cast<uint32_t>(header_str.size());
  for (int i = 0; i < 4; ++i) payload.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  payload += header_str;
  for (const auto& [name, tensor] : model.params()) {
    for (double v : tensor.values()) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      put_u64_le(payload, bits);
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) + 4 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  }
  uint32_t len = 0;
  for (int i = 3; i >= 0; --i) {
    len = (len << 8) | static_cast<unsigned char>(data[sizeof(kMagic) + i]);
  }
  const size_t header_off = sizeof(kMagic) + 4;
  if (data.size() < header_off + len) {
    throw IoError("load_checkpoint: truncated header in " + path);
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(header_off, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: malformed header in " + path + ": " + e.what());
  }

  ModelConfig mc;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Shape>> entries;
  try {
    const auto& jm = header.at("model");
    mc.classes = jm.at("classes").get<int>();
    mc.height = jm.at("height").get<int>();
    mc.width = jm.at("width").get<int>();
    mc.in_channels = jm.at("in_channels").get<int>();
    mc.widths = jm.at("widths").get<std::vector<int>>();
    mc.kernel = jm.at("kernel").get<int>();
    meta.config_hash = header.at("config_hash").get<std::string>();
    meta.seed = header.at("seed").get<uint64_t>();
    meta.stage = header.at("stage").get<std::string>();
    for (const auto& row : header.at("params")) {
      entries.emplace_back(row.at("name").get<std::string>(),
                           row.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: header missing fields in " + path + ": " + e.what());
  }

  size_t pos = header_off + len;
  ParameterSet params;
  for (const auto& [name, shape] : entries) {
    const int64_t n = numel(shape);
    if (data.size() < pos + static_cast<size_t>(n) * 8) {
      throw IoError("load_checkpoint: truncated parameter '" + name + "' in " + path);
    }
    std::vector<double> values(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const uint64_t bits =
          get_u64_le(reinterpret_cast<const unsigned char*>(data.data()) + pos);
      std::memcpy(&values[static_cast<size_t>(i)], &bits, sizeof(double));
      pos += 8;
    }
    params.add(name, Tensor::from_values(shape, std::move(values)));
  }
  if (pos != data.size()) {
    throw IoError("load_checkpoint: trailing bytes in " + path);
  }

  try {
    return LoadedCheckpoint{EvidentialModel(std::move(mc), std::move(params)), meta};
  } catch (const ConfigError& e) {
    throw IoError("load_checkpoint: inconsistent checkpoint " + path + ": " + e.what());
  }
}

}  // namespace fgrm
