#pragma once

#include <filesystem>
#include <iosfwd>

#include "cali/numkit/tensor.hpp"

namespace cali::nk {

// CALT layout, all integers little-endian:
//   "CALT" | u32 version = 1 | u8 dtype (1 = f64) | u8 rank | u32 dims[rank] | f64 payload
void write_tensor(std::ostream& out, const Tensor& t);
// Throws FormatError with the byte offset (relative to the stream start
// position) on a bad magic, version, dtype, or truncated payload.
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace cali::nk
