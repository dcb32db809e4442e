#include "laneptq/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace laneptq {

namespace {

constexpr char kMagic[4] = {'L', 'Q', 'C', 'K'};
constexpr uint32_t kVersion = 1;

// The toolchain targets little-endian hosts only; plain writes match the
// on-disk format.
template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated while reading " + what);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  uint32_t len = read_pod<uint32_t>(is, "name length");
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible name length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated name");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_string(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (int e : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.quant.size()));
  for (const auto& [name, spec] : ckpt.quant) {
    write_string(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(spec.bits));
    write_pod<double>(os, spec.scale);
    write_pod<uint8_t>(os, spec.target == QuantSpec::Target::weight ? 0 : 1);
  }
  write_pod<uint64_t>(os, ckpt.config_hash);
  write_pod<uint64_t>(os, ckpt.seed);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  uint32_t count = read_pod<uint32_t>(is, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    uint32_t rank = read_pod<uint32_t>(is, "rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int>(read_pod<uint64_t>(is, "extent"));
      n *= shape[r];
    }
    std::vector<double> values(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data for " + name);
    ckpt.tensors.emplace(name, Tensor::from_values(shape, std::move(values)));
  }
  uint32_t specs = read_pod<uint32_t>(is, "quant spec count");
  for (uint32_t i = 0; i < specs; ++i) {
    std::string name = read_string(is);
    QuantSpec spec;
    spec.bits = static_cast<int>(read_pod<uint32_t>(is, "bits"));
    spec.scale = read_pod<double>(is, "scale");
    spec.target =
        read_pod<uint8_t>(is, "target") == 0 ? QuantSpec::Target::weight : QuantSpec::Target::activation;
    spec.frozen = true;  // anything persisted was calibrated and frozen
    ckpt.quant.emplace(name, spec);
  }
  ckpt.config_hash = read_pod<uint64_t>(is, "config hash");
  ckpt.seed = read_pod<uint64_t>(is, "seed");
  return ckpt;
}

}  // namespace laneptq
