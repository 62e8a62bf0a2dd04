#include "nas/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace nas {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  NAS_CHECK(in.good(), ParseError, "unexpected end of binary stream");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  NAS_CHECK(t.defined(), ContractError, "write_tensor: undefined tensor");
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  const auto rank = read_pod<std::uint32_t>(in);
  NAS_CHECK(rank <= 8, ParseError, "tensor blob: implausible rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) {
    d = read_pod<std::uint32_t>(in);
    NAS_CHECK(d > 0, ParseError, "tensor blob: zero dimension");
  }
  std::vector<double> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  NAS_CHECK(in.good(), ParseError, "tensor blob: truncated data section");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NAS_CHECK(out.is_open(), DataError, "cannot open checkpoint for writing: " + path);
  out.write("NASF", 4);
  write_pod<std::uint16_t>(out, kCheckpointVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [key, tensor] : entries) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    write_tensor(out, tensor);
  }
  NAS_CHECK(out.good(), DataError, "checkpoint write failed: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NAS_CHECK(in.is_open(), DataError, "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  NAS_CHECK(in.good() && std::memcmp(magic, "NASF", 4) == 0, ParseError,
            "not a checkpoint file (bad magic): " + path);
  const auto version = read_pod<std::uint16_t>(in);
  NAS_CHECK(version == kCheckpointVersion, ParseError,
            "unsupported checkpoint version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in);
  std::map<std::string, Tensor> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto key_len = read_pod<std::uint32_t>(in);
    NAS_CHECK(key_len > 0 && key_len < 4096, ParseError, "checkpoint: implausible key length");
    std::string key(key_len, '\0');
    in.read(key.data(), key_len);
    NAS_CHECK(in.good(), ParseError, "checkpoint: truncated key");
    entries.emplace(std::move(key), read_tensor(in));
  }
  return entries;
}

}  // namespace nas
