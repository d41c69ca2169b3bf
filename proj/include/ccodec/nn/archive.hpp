#pragma once

// Single-file tensor archive:
//   8-byte magic "CCODECAR", u64 header length, JSON header, raw f64 data.
// The header carries caller metadata plus a manifest entry per tensor
// {name, shape, dtype, offset}; offsets are byte offsets into the data block.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccodec/nn/tape.hpp"

namespace ccodec::nn {

struct Archive {
  nlohmann::json header;  // includes "manifest"
  std::map<std::string, Matrix> tensors;
};

void save_archive(const std::filesystem::path& path, nlohmann::json header,
                  const std::vector<const Parameter*>& params);
// Raises CheckpointError on a truncated or malformed file.
Archive load_archive(const std::filesystem::path& path);
// Copies archived tensors into `params` by name; shapes must agree.
void restore_parameters(const Archive& archive, const std::vector<Parameter*>& params);

}  // namespace ccodec::nn
