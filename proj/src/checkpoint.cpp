#include "cdt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "cdt/blob.hpp"
#include "cdt/error.hpp"

namespace cdt {

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                     const nlohmann::json& config_echo, const ParamMap& params) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create checkpoint dir " + dir.string() + ": " + ec.message());

  std::ostringstream blob;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params) { // std::map: already name-sorted
    write_blob(blob, t);
    std::size_t bytes = blob_size(t.shape());
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"bytes", bytes}});
    offset += bytes;
  }

  nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                          {"kind", kind},
                          {"versions", {{"checkpoint", kCheckpointFormatVersion},
                                        {"tensor_blob", "CDT1"}}},
                          {"config", config_echo},
                          {"params", index}};

  {
    std::ofstream out(dir / "params.bin", std::ios::binary);
    if (!out) throw io_error("cannot write " + (dir / "params.bin").string());
    const std::string& bytes = blob.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed for " + (dir / "params.bin").string());
  }
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw io_error("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    if (!out) throw io_error("write failed for " + (dir / "manifest.json").string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw io_error("missing checkpoint manifest in " + dir.string());
  Checkpoint ck;
  try {
    min >> ck.manifest;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt checkpoint manifest in " + dir.string() + ": " + e.what());
  }

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw io_error("missing params.bin in " + dir.string());
  std::string bytes((std::istreambuf_iterator<char>(bin)), {});

  try {
    if (ck.manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw io_error("unsupported checkpoint format in " + dir.string());
    std::size_t consumed = 0;
    for (const auto& entry : ck.manifest.at("params")) {
      std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      std::size_t offset = entry.at("offset").get<std::size_t>();
      std::size_t size = entry.at("bytes").get<std::size_t>();
      if (offset != consumed || size != blob_size(shape) || offset + size > bytes.size())
        throw io_error("checkpoint index entry '" + name + "' does not match params.bin in " +
                       dir.string());
      std::istringstream slice(bytes.substr(offset, size));
      Tensor t = read_blob(slice);
      if (t.shape() != shape)
        throw io_error("checkpoint blob shape mismatch for '" + name + "' in " + dir.string());
      if (!ck.params.emplace(name, Tensor::parameter(t)).second)
        throw io_error("duplicate checkpoint parameter '" + name + "' in " + dir.string());
      consumed += size;
    }
    if (consumed != bytes.size())
      throw io_error("params.bin has trailing bytes in " + dir.string());
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, const std::string& expect_kind) {
  Checkpoint ck = load_checkpoint(dir);
  std::string kind;
  try {
    kind = ck.manifest.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw io_error("checkpoint manifest lacks a kind tag in " + dir.string());
  }
  if (kind != expect_kind)
    throw io_error("checkpoint in " + dir.string() + " is kind '" + kind + "', expected '" +
                   expect_kind + "'");
  return ck;
}

} // namespace cdt
