#include "ccodec/nn/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ccodec/errors.hpp"

namespace ccodec::nn {

namespace {
constexpr char kMagic[8] = {'C', 'C', 'O', 'D', 'E', 'C', 'A', 'R'};
}

void save_archive(const std::filesystem::path& path, nlohmann::json header,
                  const std::vector<const Parameter*>& params) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Parameter* p : params) {
    manifest.push_back({{"name", p->name},
                        {"shape", {p->value.rows(), p->value.cols()}},
                        {"dtype", "f64"},
                        {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
  }
  header["manifest"] = std::move(manifest);
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint archive");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  Archive archive;
  try {
    archive.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  const auto data_start = in.tellg();
  for (const auto& entry : archive.header.at("manifest")) {
    if (entry.at("dtype") != "f64") throw CheckpointError("unsupported dtype in " + path.string());
    const auto rows = entry.at("shape")[0].get<Eigen::Index>();
    const auto cols = entry.at("shape")[1].get<Eigen::Index>();
    Matrix m(rows, cols);
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw CheckpointError(path.string() + ": truncated tensor " + entry.at("name").get<std::string>());
    archive.tensors.emplace(entry.at("name").get<std::string>(), std::move(m));
  }
  return archive;
}

void restore_parameters(const Archive& archive, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const auto it = archive.tensors.find(p->name);
    if (it == archive.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw CheckpointError("checkpoint tensor " + p->name + " has the wrong shape");
    }
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace ccodec::nn
