#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "fgrm/checkpoint.hpp"
#include "fgrm/errors.hpp"

namespace fs = std::filesystem;
using fgrm::EvidentialModel;
using fgrm::ModelConfig;

namespace {

ModelConfig mc() {
  ModelConfig c;
  c.classes = 3;
  c.height = 8;
  c.width = 8;
  c.widths = {4, 2};
  return c;
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const char* name) : path(name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  TmpDir tmp("test_tmp_ckpt");
  const EvidentialModel model(mc(), 123);
  const fs::path file = tmp.path / "m.fgrm";
  fgrm::save_checkpoint(file.string(), model, {"0123456789abcdef", 123, "pretrain"});

  const fgrm::LoadedCheckpoint lc = fgrm::load_checkpoint(file.string());
  CHECK(lc.meta.config_hash == "0123456789abcdef");
  CHECK(lc.meta.seed == 123);
  CHECK(lc.meta.stage == "pretrain");
  CHECK(lc.model.config().same_architecture(mc()));
  CHECK(lc.model.params().max_abs_diff(model.params()) == 0.0);
  // bitwise: flat values identical
  CHECK(lc.model.params().flat_values() == model.params().flat_values());

  // saving the loaded model again produces identical bytes
  const fs::path file2 = tmp.path / "m2.fgrm";
  fgrm::save_checkpoint(file2.string(), lc.model, lc.meta);
  std::ifstream a(file, std::ios::binary), b(file2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                            std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(!bytes_a.empty());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  TmpDir tmp("test_tmp_ckpt_bad");
  const EvidentialModel model(mc(), 5);
  const fs::path file = tmp.path / "m.fgrm";
  fgrm::save_checkpoint(file.string(), model, {"h", 5, "pretrain"});

  // wrong magic
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(fgrm::load_checkpoint(file.string()), fgrm::IoError);

  // truncated payload
  fgrm::save_checkpoint(file.string(), model, {"h", 5, "pretrain"});
  const auto full_size = fs::file_size(file);
  fs::resize_file(file, full_size - 7);
  CHECK_THROWS_AS(fgrm::load_checkpoint(file.string()), fgrm::IoError);

  // trailing garbage
  fgrm::save_checkpoint(file.string(), model, {"h", 5, "pretrain"});
  {
    std::ofstream f(file, std::ios::app | std::ios::binary);
    f << "extra";
  }
  CHECK_THROWS_AS(fgrm::load_checkpoint(file.string()), fgrm::IoError);

  CHECK_THROWS_AS(fgrm::load_checkpoint((tmp.path / "missing.fgrm").string()), fgrm::IoError);
}

TEST_CASE("checkpoint loader rejects an inconsistent header") {
  TmpDir tmp("test_tmp_ckpt_hdr");
  const EvidentialModel model(mc(), 5);
  const fs::path file = tmp.path / "m.fgrm";
  fgrm::save_checkpoint(file.string(), model, {"h", 5, "pretrain"});

  // flip a byte inside the JSON header (the first '8' of "height":8 region)
  std::ifstream in(file, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const size_t pos = bytes.find("\"classes\"");
  REQUIRE(pos != std::string::npos);
  const size_t digit = bytes.find('3', pos);
  REQUIRE(digit != std::string::npos);
  bytes[digit] = '9';  // classes 3 -> 9, params no longer match
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(fgrm::load_checkpoint(file.string()), fgrm::IoError);
}
