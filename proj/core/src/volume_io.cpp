#include "dualseg/volume_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <nlohmann/json.hpp>

#include "dualseg/error.hpp"

namespace dualseg {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::int64_t kMinVoxOffset = 352;

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T load(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return v;
}

// Payload byte order differs from host only on big-endian machines.
constexpr bool kHostIsLittle = std::endian::native == std::endian::little;

fs::path strip_portable_extension(const fs::path& base) {
  const auto ext = base.extension();
  if (ext == ".json" || ext == ".f32") return fs::path(base).replace_extension();
  return base;
}

}  // namespace

RawVolume read_nifti1(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
      static_cast<unsigned char>(bytes[1]) == 0x8b) {
    throw Error(Errc::CompressedInput, path.string() + " is gzip-compressed; decompress it first");
  }
  if (bytes.size() < kNiftiHeaderSize) {
    throw Error(Errc::BadMagic, path.string() + " is shorter than a NIfTI-1 header");
  }

  const char* h = bytes.data();
  bool swap = false;
  if (load<std::int32_t>(h, false) != 348) {
    if (load<std::int32_t>(h, true) != 348) {
      throw Error(Errc::BadMagic, path.string() + ": sizeof_hdr is not 348 in either byte order");
    }
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1\0", 4) != 0) {
    throw Error(Errc::BadMagic, path.string() + ": magic is not \"n+1\"");
  }

  VolumeHeader header;
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h + 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw Error(Errc::BadMagic, path.string() + ": invalid dim[0]");
  auto axis = [&](int i) { return i <= dim[0] ? static_cast<int>(dim[i]) : 1; };
  header.dims = {axis(3), axis(2), axis(1)};
  if (header.dims.d < 1 || header.dims.h < 1 || header.dims.w < 1) {
    throw Error(Errc::BadMagic, path.string() + ": non-positive dimension");
  }

  header.datatype_code = load<std::int16_t>(h + 70, swap);
  header.vox_offset = static_cast<std::int64_t>(load<float>(h + 108, swap));
  header.scl_slope = load<float>(h + 112, swap);
  header.scl_inter = load<float>(h + 116, swap);

  std::size_t voxel_bytes = 0;
  switch (header.datatype_code) {
    case 4: voxel_bytes = 2; break;
    case 8: voxel_bytes = 4; break;
    case 16: voxel_bytes = 4; break;
    default:
      throw Error(Errc::UnsupportedDatatype,
                  path.string() + ": datatype " + std::to_string(header.datatype_code) + " (supported: 4, 8, 16)");
  }
  if (header.vox_offset < kMinVoxOffset || static_cast<std::size_t>(header.vox_offset) > bytes.size()) {
    throw Error(Errc::TruncatedFile, path.string() + ": vox_offset " + std::to_string(header.vox_offset) +
                                         " outside file of " + std::to_string(bytes.size()) + " bytes");
  }
  const std::size_t count = header.dims.count();
  if (bytes.size() - static_cast<std::size_t>(header.vox_offset) < count * voxel_bytes) {
    throw Error(Errc::TruncatedFile, path.string() + ": expected " + std::to_string(count * voxel_bytes) +
                                         " voxel bytes");
  }

  // NIfTI-1: a zero slope means "no scaling".
  const double slope = (header.scl_slope == 0.0 || !std::isfinite(header.scl_slope)) ? 1.0 : header.scl_slope;
  const double inter = std::isfinite(header.scl_inter) ? header.scl_inter : 0.0;

  RawVolume out{header, Volume(header.dims)};
  const char* p = bytes.data() + header.vox_offset;
  for (std::size_t i = 0; i < count; ++i, p += voxel_bytes) {
    double v = 0.0;
    switch (header.datatype_code) {
      case 4: v = load<std::int16_t>(p, swap); break;
      case 8: v = load<std::int32_t>(p, swap); break;
      default: v = load<float>(p, swap); break;
    }
    out.voxels.values[i] = static_cast<float>(slope * v + inter);
  }
  return out;
}

fs::path portable_header_path(const fs::path& base) {
  fs::path p = strip_portable_extension(base);
  p += ".json";
  return p;
}

fs::path portable_payload_path(const fs::path& base) {
  fs::path p = strip_portable_extension(base);
  p += ".f32";
  return p;
}

void write_f32_payload(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  if constexpr (kHostIsLittle) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto b = std::bit_cast<std::array<char, 4>>(v);
      std::reverse(b.begin(), b.end());
      out.write(b.data(), 4);
    }
  }
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

std::vector<float> read_f32_payload(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  if (bytes.size() % 4 != 0) {
    throw Error(Errc::HeaderMismatch, path.string() + ": payload size is not a multiple of 4");
  }
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = load<float>(bytes.data() + 4 * i, !kHostIsLittle);
  return values;
}

RawVolume read_portable(const fs::path& base) {
  const fs::path header_path = portable_header_path(base);
  const fs::path payload_path = portable_payload_path(base);
  if (!fs::exists(header_path)) throw Error(Errc::MissingSidecar, "missing sidecar " + header_path.string());

  nlohmann::json j;
  try {
    std::ifstream in(header_path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::HeaderMismatch, header_path.string() + ": " + e.what());
  }
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
    throw Error(Errc::HeaderMismatch, header_path.string() + ": dims must be [D, H, W]");
  }
  if (j.value("dtype", "f32") != "f32" || j.value("order", "DHW") != "DHW") {
    throw Error(Errc::HeaderMismatch, header_path.string() + ": only dtype f32 / order DHW are supported");
  }
  const Dims3 dims{j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
  if (dims.d < 1 || dims.h < 1 || dims.w < 1) {
    throw Error(Errc::HeaderMismatch, header_path.string() + ": dims must be positive");
  }
  if (!fs::exists(payload_path)) throw Error(Errc::HeaderMismatch, "missing payload " + payload_path.string());

  std::vector<float> values = read_f32_payload(payload_path);
  if (values.size() != dims.count()) {
    throw Error(Errc::HeaderMismatch, payload_path.string() + ": " + std::to_string(values.size()) +
                                          " floats for dims of " + std::to_string(dims.count()));
  }
  RawVolume out;
  out.header.dims = dims;
  out.header.datatype_code = 16;
  out.voxels.dims = dims;
  out.voxels.values = std::move(values);
  return out;
}

void write_portable(const Volume& volume, const fs::path& base) {
  if (volume.values.size() != volume.dims.count()) {
    throw Error(Errc::HeaderMismatch, "volume storage does not match its dims");
  }
  const nlohmann::json j = {
      {"dims", {volume.dims.d, volume.dims.h, volume.dims.w}}, {"dtype", "f32"}, {"order", "DHW"}};
  {
    std::ofstream out(portable_header_path(base), std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + portable_header_path(base).string());
    out << j.dump() << '\n';
  }
  write_f32_payload(portable_payload_path(base), volume.values);
}

void write_mask_pgm(const Mask& mask, const fs::path& path) {
  if (std::any_of(mask.values.begin(), mask.values.end(), [](unsigned char v) { return v > 1; })) {
    throw Error(Errc::NonBinaryMask, "mask values must be 0 or 1");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "P5\n" << mask.w << ' ' << mask.h << "\n255\n";
  std::vector<char> payload(mask.values.size());
  std::transform(mask.values.begin(), mask.values.end(), payload.begin(),
                 [](unsigned char v) { return static_cast<char>(v ? 0xFF : 0x00); });
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace dualseg
