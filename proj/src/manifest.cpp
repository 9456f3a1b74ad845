#include "rvae/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rvae/errors.hpp"

namespace rvae {

namespace fs = std::filesystem;

namespace {

using Digest = std::array<unsigned char, 20>;

Digest object_digest(std::string_view type, std::span<const unsigned char> bytes) {
  const std::string header = std::string(type) + ' ' + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  Digest d;
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), d.data(), &len) != 1 ||
      len != d.size())
    throw std::runtime_error("SHA-1 digest failed");
  return d;
}

std::string hex(const Digest& d) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : d) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::vector<unsigned char> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string git_blob_hash(std::span<const unsigned char> bytes) { return hex(object_digest("blob", bytes)); }

std::string git_blob_hash(std::string_view bytes) {
  return git_blob_hash(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

std::string git_file_hash(const fs::path& file) { return git_blob_hash(read_bytes(file)); }

std::string git_tree_hash(const fs::path& dir, std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  std::vector<unsigned char> tree;
  for (const auto& name : names) {
    const std::string head = "100644 " + name + '\0';
    tree.insert(tree.end(), head.begin(), head.end());
    const Digest d = object_digest("blob", read_bytes(dir / name));
    tree.insert(tree.end(), d.begin(), d.end());
  }
  return hex(object_digest("tree", tree));
}

std::string checkpoint_hash(const fs::path& dir) { return git_tree_hash(dir, {"manifest.json", "weights.bin"}); }

std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("SOURCE_DATE_EPOCH is not an integer: ") + epoch);
    t = std::time_t(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), std::streamsize(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["checkpoint_hash"] = checkpoint_hash ? nlohmann::json(*checkpoint_hash) : nlohmann::json(nullptr);
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["outputs"] = outputs;
  return j;
}

void RunManifest::write(const fs::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

}  // namespace rvae
