#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "nas/tensor.hpp"

namespace nas {

// Binary tensor blob, little-endian: u32 rank, u32 dims[rank], f64 data[].
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

// Checkpoint file: magic "NASF", u16 version, u32 entry count, then entries
// (u32 key length, key bytes, tensor blob) in ascending key order.  A
// std::map keeps the order canonical so identical states produce identical
// bytes.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace nas
