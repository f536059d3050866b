#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "airpcm/digest.hpp"
#include "airpcm/error.hpp"
#include "airpcm/model.hpp"

namespace airpcm {
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "airpcm-checkpoint";
constexpr int kVersion = 1;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& dir, const AirPCMWeights& w, const nlohmann::json& extra) {
  fs::create_directories(dir);
  std::string bytes;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& p : w.params.items()) {
    index.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", bytes.size()}});
    for (double v : p.tensor.data()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      char raw[4];
      std::memcpy(raw, &bits, 4);
      bytes.append(raw, 4);
    }
  }
  {
    std::ofstream out(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!out) throw DataError("cannot write " + (fs::path(dir) / "weights.bin").string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  nlohmann::json manifest = extra;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["config"] = w.config.to_json();
  manifest["tensors"] = index;
  manifest["weights_file"] = "weights.bin";
  manifest["weights_bytes"] = bytes.size();
  manifest["weights_sha256"] = sha256_hex(bytes);
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw DataError("cannot write " + (fs::path(dir) / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw DataError("checkpoint manifest not found: " + mpath.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw DataError(mpath.string() + " is not a version " + std::to_string(kVersion) +
                    " airpcm checkpoint");
  }
  AirPCMConfig config;
  config.merge_json(manifest.at("config"));
  AirPCMWeights w = init_weights(config, 0);

  const fs::path wpath = fs::path(dir) / manifest.value("weights_file", "weights.bin");
  std::ifstream win(wpath, std::ios::binary);
  if (!win) throw DataError("checkpoint weights not found: " + wpath.string());
  const std::string bytes((std::istreambuf_iterator<char>(win)), std::istreambuf_iterator<char>());
  if (sha256_hex(bytes) != manifest.value("weights_sha256", "")) {
    throw DataError("checkpoint weights digest mismatch in " + wpath.string());
  }

  const auto& index = manifest.at("tensors");
  if (index.size() != w.params.size()) {
    throw DataError("checkpoint holds " + std::to_string(index.size()) + " tensors, config expects " +
                    std::to_string(w.params.size()));
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto& p = w.params.items()[i];
    const auto& entry = index[i];
    const auto shape = entry.at("shape").get<Shape>();
    if (entry.at("name").get<std::string>() != p.name || shape != p.tensor.shape()) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " (" +
                      entry.at("name").get<std::string>() + " " + to_string(shape) +
                      ") does not match expected " + p.name + " " + to_string(p.tensor.shape()));
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + 4 * p.tensor.numel() > bytes.size()) {
      throw DataError("checkpoint weights file is truncated at " + p.name);
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t v = 0; v < dst.size(); ++v) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + offset + 4 * v, 4);
      dst[v] = static_cast<double>(std::bit_cast<float>(to_little(bits)));
    }
  }
  return {std::move(w), std::move(manifest)};
}

}  // namespace airpcm
