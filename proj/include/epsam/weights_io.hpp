#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace epsam {

// Versioned binary container: magic "EPSW", a JSON header describing the
// architecture and hyperparameters, then raw little-endian float64 tensors.
struct WeightsFile {
  nlohmann::json header;
  std::vector<std::vector<double>> tensors;
};

std::string serialize_weights(const WeightsFile& wf);
WeightsFile deserialize_weights(const std::string& bytes);

void save_weights_file(const std::filesystem::path& path, const WeightsFile& wf);
WeightsFile load_weights_file(const std::filesystem::path& path);

// Hash over the serialized bytes; used for frozen-parameter and
// re-initialization contracts.
uint64_t weights_checksum(const WeightsFile& wf);

}  // namespace epsam
