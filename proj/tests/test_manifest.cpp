#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "rvae/errors.hpp"
#include "rvae/manifest.hpp"
#include "test_util.hpp"

using namespace rvae;
using rvae::testing::read_file;
using rvae::testing::TempDir;

namespace {

void put(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

struct EpochGuard {
  explicit EpochGuard(const char* value) {
    if (const char* old = std::getenv("SOURCE_DATE_EPOCH")) saved = old;
    if (value) ::setenv("SOURCE_DATE_EPOCH", value, 1);
    else ::unsetenv("SOURCE_DATE_EPOCH");
  }
  ~EpochGuard() {
    if (saved.empty()) ::unsetenv("SOURCE_DATE_EPOCH");
    else ::setenv("SOURCE_DATE_EPOCH", saved.c_str(), 1);
  }
  std::string saved;
};

}  // namespace

TEST_SUITE("manifest") {

TEST_CASE("blob hashes match git hash-object") {
  CHECK(git_blob_hash(std::string_view("")) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash(std::string_view("hello\n")) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("checkpoint hash matches git write-tree") {
  TempDir dir;
  put(dir / "manifest.json", "{\"a\":1}\n");
  put(dir / "weights.bin", "abc");
  put(dir / "history.csv", "ignored");
  CHECK(checkpoint_hash(dir.path()) == "b10474a726b993f11320f46e06ac727cb01fe532");
  CHECK(git_tree_hash(dir.path(), {"weights.bin", "manifest.json"}) == checkpoint_hash(dir.path()));
  put(dir / "weights.bin", "abd");
  CHECK(checkpoint_hash(dir.path()) != "b10474a726b993f11320f46e06ac727cb01fe532");
}

TEST_CASE("missing checkpoint files raise IoError") {
  TempDir dir;
  CHECK_THROWS_AS(checkpoint_hash(dir.path()), IoError);
}

TEST_CASE("timestamps honour SOURCE_DATE_EPOCH") {
  {
    EpochGuard g("1700000000");
    CHECK(utc_timestamp() == "2023-11-14T22:13:20Z");
  }
  {
    EpochGuard g("soon");
    CHECK_THROWS_AS(utc_timestamp(), ConfigError);
  }
  EpochGuard g(nullptr);
  CHECK(utc_timestamp().size() == 20);
}

TEST_CASE("atomic write replaces contents and leaves no temporary") {
  TempDir dir;
  write_file_atomic(dir / "x.txt", "one");
  write_file_atomic(dir / "x.txt", "two");
  CHECK(read_file(dir / "x.txt") == "two");
  std::size_t files = 0;
  for ([[maybe_unused]] auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  CHECK(files == 1);
}

TEST_CASE("run manifest is stable under a fixed epoch") {
  EpochGuard g("1700000000");
  RunManifest m;
  m.command = "train";
  m.seed = 7;
  m.config = {{"hidden", 64}};
  m.started_at = m.finished_at = utc_timestamp();
  const auto j = m.to_json();
  CHECK(j.at("command") == "train");
  CHECK(j.at("seed") == 7);
  CHECK(j.at("config").at("hidden") == 64);
  CHECK(j.dump() == RunManifest(m).to_json().dump());
}

}  // TEST_SUITE
