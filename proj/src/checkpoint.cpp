#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "rvae/errors.hpp"
#include "rvae/training.hpp"

namespace rvae {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "rvae-checkpoint";

void append_le(std::string& blob, double x) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) blob.push_back(char((bits >> (8 * i)) & 0xFF));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& dir) {
  const Model& m = ckpt.model;
  if (m.decoder.variant != m.encoder.variant || !(m.decoder.dims == m.encoder.dims))
    throw ContractError("save_checkpoint: decoder and encoder disagree on variant or dimensions");
  std::filesystem::create_directories(dir);

  std::string blob;
  json tensors = json::array();
  for (const ParamSet* set : {&m.decoder.tensors, &m.encoder.tensors}) {
    for (const auto& [name, t] : *set) {
      tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
      for (double x : t.values()) append_le(blob, x);
    }
  }
  json manifest = {
      {"format", kFormatTag},
      {"version", kCheckpointVersion},
      {"variant", to_string(m.variant())},
      {"dims", {{"latent", m.dims().latent}, {"freqs", m.dims().freqs}, {"hidden", m.dims().hidden}}},
      {"lstm_gate_order", {"input", "forget", "cell", "output"}},
      {"dtype", "float64-le"},
      {"blob_bytes", blob.size()},
      {"tensors", tensors},
      {"training",
       {{"epoch", ckpt.meta.epoch},
        {"steps", ckpt.meta.steps},
        {"seed", ckpt.meta.seed},
        {"validation_vfe", ckpt.meta.validation_vfe ? json(*ckpt.meta.validation_vfe) : json(nullptr)}}},
  };
  write_file(dir / "weights.bin", blob);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(slurp(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  const std::string blob = slurp(dir / "weights.bin");
  try {
    if (manifest.value("format", "") != kFormatTag) throw FormatError("not an rvae checkpoint manifest");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                        std::to_string(kCheckpointVersion) + ")");
    if (manifest.at("dtype").get<std::string>() != "float64-le") throw FormatError("unsupported tensor dtype");
    const auto blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    if (blob.size() != blob_bytes)
      throw FormatError("weights.bin holds " + std::to_string(blob.size()) + " bytes, manifest declares " +
                        std::to_string(blob_bytes));

    ModelCheckpoint ckpt;
    const Variant variant = parse_variant(manifest.at("variant").get<std::string>());
    const json& d = manifest.at("dims");
    const ModelDims dims{d.at("latent").get<std::size_t>(), d.at("freqs").get<std::size_t>(),
                         d.at("hidden").get<std::size_t>()};
    ckpt.model.decoder = {variant, dims, {}};
    ckpt.model.encoder = {variant, dims, {}};

    std::size_t expected_offset = 0;
    for (const json& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (offset != expected_offset) throw FormatError("tensor '" + name + "' is not contiguous in weights.bin");
      if (count != shape_product(shape)) throw FormatError("tensor '" + name + "' count does not match its shape");
      if (offset + 8 * count > blob.size()) throw FormatError("tensor '" + name + "' runs past the end of weights.bin");
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = read_le(blob.data() + offset + 8 * i);
      expected_offset = offset + 8 * count;
      ParamSet* target = name.starts_with("dec.")   ? &ckpt.model.decoder.tensors
                         : name.starts_with("enc.") ? &ckpt.model.encoder.tensors
                                                    : nullptr;
      if (!target) throw FormatError("tensor '" + name + "' belongs to neither decoder nor encoder");
      target->emplace(name, Tensor(shape, std::move(values)));
    }
    if (expected_offset != blob.size()) throw FormatError("weights.bin has trailing bytes not covered by the manifest");
    ckpt.model.decoder.validate();
    ckpt.model.encoder.validate();

    const json& tr = manifest.at("training");
    ckpt.meta.epoch = tr.at("epoch").get<std::size_t>();
    ckpt.meta.steps = tr.at("steps").get<std::size_t>();
    ckpt.meta.seed = tr.at("seed").get<std::uint64_t>();
    if (!tr.at("validation_vfe").is_null()) ckpt.meta.validation_vfe = tr.at("validation_vfe").get<double>();
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint tensors do not match the declared architecture: " + std::string(e.what()));
  }
}

}  // namespace rvae
