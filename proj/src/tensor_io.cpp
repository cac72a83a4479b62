#include "raffnet/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace raffnet {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'F', 'F', 'T', 'N', 'S', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated tensor file while reading " + what);
  return v;
}

}  // namespace

void write_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kTensorFormatVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::int64_t>(out, m.rows());
    put<std::int64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw DataError("cannot write " + path.string());
}

TensorMap read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError(path.string() + " is not a tensor file");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kTensorFormatVersion) throw DataError("unsupported tensor file version " + std::to_string(version));
  const auto count = get<std::uint64_t>(in, "tensor count");
  TensorMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw DataError("truncated tensor file while reading a name");
    const auto rows = get<std::int64_t>(in, name);
    const auto cols = get<std::int64_t>(in, name);
    if (rows < 0 || cols < 0) throw DataError("negative shape for tensor '" + name + "'");
    Matrix m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size())))
      throw DataError("truncated tensor file while reading " + name);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace raffnet
