#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dualseg/grid.hpp"

namespace dualseg {

/// Subset of the NIfTI-1 header needed to decode a single 3D volume.
struct VolumeHeader {
  Dims3 dims;                  // D = dim[3], H = dim[2], W = dim[1]
  int datatype_code = 16;      // 4 int16, 8 int32, 16 float32
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  std::int64_t vox_offset = 352;
};

struct RawVolume {
  VolumeHeader header;
  Volume voxels;  // scl_slope * stored + scl_inter
};

/// Reads an uncompressed single-file NIfTI-1 volume (.nii). Byte order is
/// detected from sizeof_hdr. Gzip input is rejected with CompressedInput so
/// the caller can decompress externally. Only the first 3D volume is read.
RawVolume read_nifti1(const std::filesystem::path& path);

// Portable format: `<base>.json` sidecar ({"dims":[D,H,W],"dtype":"f32",
// "order":"DHW"}) next to a little-endian float32 payload `<base>.f32`.
std::filesystem::path portable_header_path(const std::filesystem::path& base);
std::filesystem::path portable_payload_path(const std::filesystem::path& base);

/// `base` may be given with or without the .json/.f32 extension.
RawVolume read_portable(const std::filesystem::path& base);
void write_portable(const Volume& volume, const std::filesystem::path& base);

/// Raw little-endian float32 payloads, shared with the checkpoint format.
void write_f32_payload(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_payload(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255): foreground 255, background 0, row-major.
void write_mask_pgm(const Mask& mask, const std::filesystem::path& path);

}  // namespace dualseg
