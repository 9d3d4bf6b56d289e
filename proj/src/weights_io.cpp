#include "epsam/weights_io.hpp"

#include <cstring>
#include <fstream>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"

namespace epsam {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'S', 'W'};
constexpr uint32_t kVersion = 1;

template <typename T>
void append_raw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_raw(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw IoError("weights container truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string serialize_weights(const WeightsFile& wf) {
  std::string out;
  out.append(kMagic, 4);
  append_raw<uint32_t>(out, kVersion);
  const std::string header = wf.header.dump();
  append_raw<uint64_t>(out, header.size());
  out.append(header);
  append_raw<uint64_t>(out, wf.tensors.size());
  for (const auto& t : wf.tensors) {
    append_raw<uint64_t>(out, t.size());
    const char* bytes = reinterpret_cast<const char*>(t.data());
    out.append(bytes, t.size() * sizeof(double));
  }
  return out;
}

WeightsFile deserialize_weights(const std::string& bytes) {
  size_t pos = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IoError("not a weights container (bad magic)");
  pos = 4;
  uint32_t version = read_raw<uint32_t>(bytes, pos);
  if (version != kVersion)
    throw IoError("unsupported weights container version " +
                  std::to_string(version));
  uint64_t header_len = read_raw<uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size())
    throw IoError("weights container truncated");
  WeightsFile wf;
  wf.header = nlohmann::json::parse(bytes.substr(pos, header_len));
  pos += header_len;
  uint64_t n_tensors = read_raw<uint64_t>(bytes, pos);
  wf.tensors.resize(n_tensors);
  for (auto& t : wf.tensors) {
    uint64_t n = read_raw<uint64_t>(bytes, pos);
    if (pos + n * sizeof(double) > bytes.size())
      throw IoError("weights container truncated");
    t.resize(n);
    std::memcpy(t.data(), bytes.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  }
  return wf;
}

void save_weights_file(const std::filesystem::path& path,
                       const WeightsFile& wf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const std::string bytes = serialize_weights(wf);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

WeightsFile load_weights_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

uint64_t weights_checksum(const WeightsFile& wf) {
  const std::string bytes = serialize_weights(wf);
  return fnv1a64(bytes);
}

}  // namespace epsam
