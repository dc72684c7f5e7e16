#include "ctcd/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace ctcd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'T', 'C', 'D'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<char>& out, T value) {
  const char* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class T>
  T get(const char* what) {
    T value;
    read(&value, sizeof(T), what);
    return value;
  }
  void read(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > end_) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const ModelConfig& config) {
  std::vector<char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    auto data = tensor.data();
    const char* p = reinterpret_cast<const char*>(data.data());
    out.insert(out.end(), p, p + data.size_bytes());
  }
  const std::uint64_t footer = out.size();
  const std::string json = to_json(config).dump();
  out.insert(out.end(), json.begin(), json.end());
  put<std::uint64_t>(out, footer);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError("cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path.string() + ": expected \"CTCD\"");
  }
  if (bytes.size() < 12 + sizeof(std::uint64_t)) throw CheckpointError("checkpoint truncated: header");
  std::uint64_t footer = 0;
  std::memcpy(&footer, bytes.data() + bytes.size() - sizeof footer, sizeof footer);
  if (footer < 12 || footer > bytes.size() - sizeof footer) {
    throw CheckpointError("checkpoint truncated or footer offset corrupt in " + path.string());
  }

  Reader r(bytes, static_cast<std::size_t>(footer));
  char magic[4];
  r.read(magic, 4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.read(name.data(), len, "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    const std::size_t n = shape_numel(shape);
    std::vector<float> values(n);
    if (dtype == 0) {
      r.read(values.data(), n * sizeof(float), name.c_str());
    } else if (dtype == 1) {
      std::vector<double> wide(n);
      r.read(wide.data(), n * sizeof(double), name.c_str());
      for (std::size_t j = 0; j < n; ++j) values[j] = static_cast<float>(wide[j]);
    } else {
      throw CheckpointError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    ck.params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  try {
    const std::string json(bytes.begin() + static_cast<std::ptrdiff_t>(footer),
                           bytes.end() - sizeof(std::uint64_t));
    ck.config = model_config_from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config footer unreadable: ") + e.what());
  }
  return ck;
}

std::string file_hash(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ctcd
