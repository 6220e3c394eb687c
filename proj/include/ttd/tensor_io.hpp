#pragma once

// "TTDC" binary tensor container:
//   magic "TTDC" | u8 version (1) | u8 dtype | u32 rank | u64 dims[rank] | payload
// All integers and payload elements are little-endian. INT4 payloads pack two
// values per byte, low nibble first; an odd trailing value leaves the high nibble 0.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "ttd/fp16.hpp"
#include "ttd/numerics.hpp"
#include "ttd/tensor.hpp"

namespace ttd {

enum class DType : std::uint8_t { F64 = 0, F32 = 1, F16 = 2, I4 = 3 };

inline constexpr std::uint8_t kContainerVersion = 1;

struct TensorFile {
  DType dtype = DType::F64;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_container(const DenseTensor& t, DType dtype = DType::F64);
std::vector<std::uint8_t> encode_container(const HalfTensor& t);
std::vector<std::uint8_t> encode_container(const Int4Tensor& t);

/// Throws FormatError on bad magic, version, dtype, or truncated payload.
TensorFile decode_container(std::span<const std::uint8_t> bytes);

/// Widen any dtype to the f64 reference tensor.
DenseTensor to_dense(const TensorFile& f);
HalfTensor to_half_tensor(const TensorFile& f);
Int4Tensor to_int4_tensor(const TensorFile& f);

/// Write via a sibling temp file and rename, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

TensorFile read_tensor_file(const std::filesystem::path& path);

template <typename TensorT>
void write_tensor_file(const std::filesystem::path& path, const TensorT& t) {
  write_file_atomic(path, encode_container(t));
}

}  // namespace ttd
