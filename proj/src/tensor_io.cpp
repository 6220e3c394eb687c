#include "ttd/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>
#include <unistd.h>

namespace ttd {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'D', 'C'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw FormatError("TTDC: truncated header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

std::vector<std::uint8_t> header(DType dtype, const Shape& shape) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kContainerVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.rank()));
  for (auto d : shape.dims()) put_le<std::uint64_t>(out, d);
  return out;
}

std::size_t payload_bytes(DType dtype, std::size_t numel) {
  switch (dtype) {
    case DType::F64: return numel * 8;
    case DType::F32: return numel * 4;
    case DType::F16: return numel * 2;
    case DType::I4: return (numel + 1) / 2;
  }
  throw FormatError("TTDC: unknown dtype");
}

}  // namespace

std::vector<std::uint8_t> encode_container(const DenseTensor& t, DType dtype) {
  auto out = header(dtype, t.shape());
  if (dtype == DType::F64) {
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  } else if (dtype == DType::F32) {
    for (double v : t.data()) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  } else {
    throw InvalidArgument("encode_container(DenseTensor) supports f64/f32 only");
  }
  return out;
}

std::vector<std::uint8_t> encode_container(const HalfTensor& t) {
  auto out = header(DType::F16, t.shape());
  for (auto h : t.data()) put_le<std::uint16_t>(out, h.bits);
  return out;
}

std::vector<std::uint8_t> encode_container(const Int4Tensor& t) {
  auto out = header(DType::I4, t.shape());
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); i += 2) {
    if (d[i] < kInt4Min || d[i] > kInt4Max ||
        (i + 1 < d.size() && (d[i + 1] < kInt4Min || d[i + 1] > kInt4Max))) {
      throw InvalidArgument("INT4 tensor value out of [-8, 7]");
    }
    const auto lo = static_cast<std::uint8_t>(d[i] & 0x0F);
    const auto hi = i + 1 < d.size() ? static_cast<std::uint8_t>(d[i + 1] & 0x0F) : std::uint8_t{0};
    out.push_back(static_cast<std::uint8_t>(lo | (hi << 4)));
  }
  return out;
}

TensorFile decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("TTDC: bad magic");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint8_t>(bytes, pos);
  if (version != kContainerVersion) {
    throw FormatError("TTDC: unsupported version " + std::to_string(version));
  }
  const auto code = get_le<std::uint8_t>(bytes, pos);
  if (code > 3) throw FormatError("TTDC: unknown dtype code " + std::to_string(code));
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));

  TensorFile f;
  f.dtype = static_cast<DType>(code);
  try {
    f.shape = Shape(dims);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("TTDC: invalid shape: ") + e.what());
  }
  const auto need = payload_bytes(f.dtype, f.shape.numel());
  if (bytes.size() - pos != need) {
    throw FormatError("TTDC: payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, expected " + std::to_string(need));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return f;
}

DenseTensor to_dense(const TensorFile& f) {
  const std::size_t n = f.shape.numel();
  std::vector<double> out(n);
  std::size_t pos = 0;
  const std::span<const std::uint8_t> p(f.payload);
  switch (f.dtype) {
    case DType::F64:
      for (auto& v : out) v = std::bit_cast<double>(get_le<std::uint64_t>(p, pos));
      break;
    case DType::F32:
      for (auto& v : out) v = std::bit_cast<float>(get_le<std::uint32_t>(p, pos));
      break;
    case DType::F16:
      for (auto& v : out) v = fp16_decode(Fp16Bits{get_le<std::uint16_t>(p, pos)});
      break;
    case DType::I4: {
      const auto q = to_int4_tensor(f);
      for (std::size_t i = 0; i < n; ++i) out[i] = q[i];
      break;
    }
  }
  return DenseTensor(f.shape, std::move(out));
}

HalfTensor to_half_tensor(const TensorFile& f) {
  if (f.dtype != DType::F16) throw FormatError("TTDC: expected fp16 payload");
  std::vector<Fp16Bits> out(f.shape.numel());
  std::size_t pos = 0;
  for (auto& v : out) v = Fp16Bits{get_le<std::uint16_t>(f.payload, pos)};
  return HalfTensor(f.shape, std::move(out));
}

Int4Tensor to_int4_tensor(const TensorFile& f) {
  if (f.dtype != DType::I4) throw FormatError("TTDC: expected int4 payload");
  std::vector<std::int8_t> out(f.shape.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint8_t byte = f.payload[i / 2];
    const std::uint8_t nib = i % 2 == 0 ? (byte & 0x0F) : (byte >> 4);
    out[i] = static_cast<std::int8_t>(nib >= 8 ? static_cast<int>(nib) - 16 : nib);
  }
  return Int4Tensor(f.shape, std::move(out));
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::system_error(errno, std::generic_category(), "open " + tmp.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::system_error(errno, std::generic_category(), "write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::system_error(errno, std::generic_category(), "open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace ttd
