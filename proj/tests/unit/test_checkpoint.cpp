#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include "mesa/checkpoint.hpp"
#include "mesa/errors.hpp"
#include "mesa/net.hpp"
#include "mesa/rng.hpp"

namespace {

using mesa::ckpt::Checkpoint;
using mesa::net::LayerShape;
using mesa::net::ParameterSet;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Checkpoint sample_checkpoint() {
  mesa::Rng rng(7);
  Checkpoint ckpt;
  ckpt.put("critic", ParameterSet::random_init(ParameterSet::mlp_shapes(4, {8, 8}, 1), rng));
  ckpt.put("policy", ParameterSet::random_init({{3, 5, true}, {2, 3, false}}, rng));
  ckpt.put_scalar("log_alpha", -1.25);
  ckpt.put_scalar("steps", 12345.0);
  return ckpt;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every entry exactly") {
  const Checkpoint original = sample_checkpoint();
  const std::string path = temp_path("mesa_ckpt_roundtrip.bin");
  mesa::ckpt::save(original, path);
  const Checkpoint loaded = mesa::ckpt::load(path);

  CHECK(loaded == original);
  REQUIRE(loaded.find("policy") != nullptr);
  CHECK(loaded.find("policy")->shapes() ==
        std::vector<LayerShape>{{3, 5, true}, {2, 3, false}});
  CHECK(loaded.scalar("log_alpha") == -1.25);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint save-load-save produces byte-identical files") {
  Checkpoint ckpt = sample_checkpoint();
  // Values that expose any lossy text formatting: signed zero, denormals,
  // extremes of the double range.
  ParameterSet tricky({{2, 2, true}});
  tricky.flat()[0] = -0.0;
  tricky.flat()[1] = 5e-324;
  tricky.flat()[2] = 1.7976931348623157e308;
  tricky.flat()[3] = 0.1 + 0.2;
  tricky.flat()[4] = -1e-300;
  tricky.flat()[5] = 3.141592653589793;
  ckpt.put("tricky", tricky);
  ckpt.put_scalar("tiny", 4.9406564584124654e-324);

  const std::string first = temp_path("mesa_ckpt_bytes_a.bin");
  const std::string second = temp_path("mesa_ckpt_bytes_b.bin");
  mesa::ckpt::save(ckpt, first);
  const Checkpoint loaded = mesa::ckpt::load(first);
  mesa::ckpt::save(loaded, second);
  CHECK(read_bytes(first) == read_bytes(second));
  std::filesystem::remove(first);
  std::filesystem::remove(second);
}

TEST_CASE("checkpoint put overwrites an existing name in place") {
  Checkpoint ckpt = sample_checkpoint();
  ParameterSet replacement({{1, 1, true}});
  replacement.fill(2.5);
  ckpt.put("critic", replacement);
  ckpt.put_scalar("log_alpha", 0.5);
  CHECK(ckpt.params.size() == 2);
  CHECK(ckpt.require("critic") == replacement);
  CHECK(ckpt.scalar("log_alpha") == 0.5);
}

TEST_CASE("checkpoint lookups report missing entries") {
  const Checkpoint ckpt = sample_checkpoint();
  CHECK(ckpt.find("absent") == nullptr);
  CHECK_THROWS_AS(ckpt.require("absent"), mesa::IoError);
  CHECK_THROWS_AS(ckpt.scalar("absent"), mesa::IoError);
}

TEST_CASE("checkpoint load rejects corrupt files") {
  const Checkpoint ckpt = sample_checkpoint();
  const std::string path = temp_path("mesa_ckpt_corrupt.bin");
  mesa::ckpt::save(ckpt, path);
  const std::vector<char> bytes = read_bytes(path);

  const auto write_variant = [&](const std::vector<char>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  };

  SUBCASE("bad magic") {
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    write_variant(bad);
    CHECK_THROWS_AS(mesa::ckpt::load(path), mesa::IoError);
  }
  SUBCASE("unsupported version") {
    std::vector<char> bad = bytes;
    bad[4] = 99;
    write_variant(bad);
    CHECK_THROWS_AS(mesa::ckpt::load(path), mesa::IoError);
  }
  SUBCASE("truncated payload") {
    std::vector<char> bad(bytes.begin(), bytes.end() - 13);
    write_variant(bad);
    CHECK_THROWS_AS(mesa::ckpt::load(path), mesa::IoError);
  }
  SUBCASE("trailing garbage") {
    std::vector<char> bad = bytes;
    bad.push_back('\0');
    write_variant(bad);
    CHECK_THROWS_AS(mesa::ckpt::load(path), mesa::IoError);
  }
  SUBCASE("missing file") {
    std::filesystem::remove(path);
    CHECK_THROWS_AS(mesa::ckpt::load(path), mesa::IoError);
  }
  std::filesystem::remove(path);
}
