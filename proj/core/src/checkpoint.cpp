#include "mesa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "mesa/errors.hpp"

namespace mesa::ckpt {

namespace {

constexpr char kMagic[4] = {'M', 'E', 'S', 'C'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxNameBytes = 1u << 16;
constexpr std::uint64_t kMaxEntryCount = 1u << 20;

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in.good()) throw IoError("checkpoint: truncated file");
  return value;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  if (len > kMaxNameBytes) throw IoError("checkpoint: implausible name length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in.good()) throw IoError("checkpoint: truncated file");
  return s;
}

}  // namespace

void Checkpoint::put(std::string name, net::ParameterSet value) {
  for (auto& [key, existing] : params) {
    if (key == name) {
      existing = std::move(value);
      return;
    }
  }
  params.emplace_back(std::move(name), std::move(value));
}

void Checkpoint::put_scalar(std::string name, double value) {
  for (auto& [key, existing] : scalars) {
    if (key == name) {
      existing = value;
      return;
    }
  }
  scalars.emplace_back(std::move(name), value);
}

const net::ParameterSet* Checkpoint::find(std::string_view name) const {
  for (const auto& [key, value] : params)
    if (key == name) return &value;
  return nullptr;
}

const net::ParameterSet& Checkpoint::require(std::string_view name) const {
  const net::ParameterSet* p = find(name);
  if (p == nullptr)
    throw IoError("checkpoint: missing parameter set '" + std::string(name) + "'");
  return *p;
}

double Checkpoint::scalar(std::string_view name) const {
  for (const auto& [key, value] : scalars)
    if (key == name) return value;
  throw IoError("checkpoint: missing scalar '" + std::string(name) + "'");
}

void save(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(ckpt.params.size()));
  for (const auto& [name, set] : ckpt.params) {
    write_string(out, name);
    write_pod(out, static_cast<std::uint32_t>(set.shapes().size()));
    for (const net::LayerShape& shape : set.shapes()) {
      write_pod(out, static_cast<std::uint64_t>(shape.out));
      write_pod(out, static_cast<std::uint64_t>(shape.in));
      write_pod(out, static_cast<std::uint8_t>(shape.bias ? 1 : 0));
    }
    write_pod(out, static_cast<std::uint64_t>(set.size()));
    out.write(reinterpret_cast<const char*>(set.data()),
              static_cast<std::streamsize>(set.size() * sizeof(double)));
  }
  write_pod(out, static_cast<std::uint64_t>(ckpt.scalars.size()));
  for (const auto& [name, value] : ckpt.scalars) {
    write_string(out, name);
    write_pod(out, value);
  }
  out.flush();
  if (!out.good()) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: bad magic bytes: " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint ckpt;
  const auto n_sets = read_pod<std::uint64_t>(in);
  if (n_sets > kMaxEntryCount) throw IoError("checkpoint: implausible entry count");
  ckpt.params.reserve(n_sets);
  for (std::uint64_t i = 0; i < n_sets; ++i) {
    std::string name = read_string(in);
    const auto n_layers = read_pod<std::uint32_t>(in);
    if (n_layers > kMaxEntryCount) throw IoError("checkpoint: implausible layer count");
    std::vector<net::LayerShape> shapes(n_layers);
    for (net::LayerShape& shape : shapes) {
      shape.out = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
      shape.in = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
      shape.bias = read_pod<std::uint8_t>(in) != 0;
    }
    net::ParameterSet set(std::move(shapes));
    const auto flat_size = read_pod<std::uint64_t>(in);
    if (flat_size != set.size())
      throw IoError("checkpoint: entry size does not match its layer shapes");
    in.read(reinterpret_cast<char*>(set.data()),
            static_cast<std::streamsize>(set.size() * sizeof(double)));
    if (!in.good()) throw IoError("checkpoint: truncated file");
    ckpt.params.emplace_back(std::move(name), std::move(set));
  }
  const auto n_scalars = read_pod<std::uint64_t>(in);
  if (n_scalars > kMaxEntryCount) throw IoError("checkpoint: implausible entry count");
  ckpt.scalars.reserve(n_scalars);
  for (std::uint64_t i = 0; i < n_scalars; ++i) {
    std::string name = read_string(in);
    const double value = read_pod<double>(in);
    ckpt.scalars.emplace_back(std::move(name), value);
  }
  in.peek();
  if (!in.eof()) throw IoError("checkpoint: trailing bytes after payload: " + path);
  return ckpt;
}

}  // namespace mesa::ckpt
