#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dualseg/grid.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg {

/// One patient's co-registered modality pair and optional binary label.
struct MultiModalVolume {
  std::string patient_id;
  Volume modality_a;
  Volume modality_b;
  std::optional<LabelVolume> label;

  /// Throws ShapeMismatch / NonBinaryMask when the invariants do not hold.
  void validate() const;
};

/// A single 2D sample. Unlabeled records never carry a mask.
struct SliceRecord {
  std::string patient_id;
  int slice_index = 0;
  Image image_a;
  Image image_b;
  std::optional<Mask> mask;
  bool labeled = false;

  friend bool operator==(const SliceRecord&, const SliceRecord&) = default;
};

struct DatasetSplit {
  std::vector<SliceRecord> labeled;
  std::vector<SliceRecord> unlabeled;
  std::vector<SliceRecord> test;
  double label_fraction = 0.1;
  std::uint64_t seed = 0;

  std::vector<std::string> labeled_patients;
  std::vector<std::string> unlabeled_patients;
  std::vector<std::string> test_patients;
};

struct PhantomSpec {
  int n_patients = 20;
  Dims3 dims{16, 40, 40};
  std::pair<int, int> lesion_radius_range{3, 7};
  double complementarity = 0.8;
  double noise_sigma = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SliceEntry {
  int slice_index = 0;
  Image image_a;
  Image image_b;
  Mask mask;
};

/// Axial slices (along D) whose label contains foreground, ascending.
std::vector<SliceEntry> slice_and_filter(const MultiModalVolume& volume);

/// Zero mean / unit population variance; near-constant images become zeros.
Image normalize_slice(const Image& image);

/// Centered window; odd remainders drop the extra row/column at bottom/right.
template <class T>
Grid2<T> center_crop(const Grid2<T>& image, int out_h, int out_w);

/// Patient-level 80/20 train/test split, then a seeded labeled subset of
/// ceil(label_fraction * train patients). Slices are normalized before
/// cropping to `crop`.
DatasetSplit make_split(const std::vector<MultiModalVolume>& volumes, double label_fraction, std::uint64_t seed,
                        std::pair<int, int> crop = {160, 160});

/// Lesion contrast used by the phantom generator: max(1, 3 * noise_sigma).
double phantom_contrast(const PhantomSpec& spec);

/// Visibility class of a lesion voxel in the phantom.
enum class LesionVisibility : unsigned char { None = 0, OnlyA = 1, OnlyB = 2, Both = 3 };

struct Phantom {
  MultiModalVolume volume;
  Grid3<LesionVisibility> visibility;
};

std::vector<Phantom> generate_phantom_detailed(const PhantomSpec& spec);
std::vector<MultiModalVolume> generate_phantom(const PhantomSpec& spec);

struct Batch {
  std::vector<const SliceRecord*> labeled;
  std::vector<const SliceRecord*> unlabeled;
};

/// One epoch of batches. The epoch length is set by the longer stream; the
/// shorter stream cycles through fresh permutations. `split` must outlive the
/// returned batches.
std::vector<Batch> make_batches(const DatasetSplit& split, int batch_labeled, int batch_unlabeled,
                                std::uint64_t seed, std::uint64_t epoch);

/// Stacks records into (B, 1, H, W) tensors per modality.
template <class T>
std::pair<Tensor<T>, Tensor<T>> stack_images(const std::vector<const SliceRecord*>& records);

/// Masks of labeled records; throws EmptyLabeledBatch if any record lacks one.
MaskBatch stack_masks(const std::vector<const SliceRecord*>& records);

// Directory layout: `<pid>_a`, `<pid>_b`, `<pid>_label` portable volumes (or
// `.nii` files) plus manifest.json listing patient ids.
std::vector<MultiModalVolume> load_volume_dir(const std::filesystem::path& dir);
void save_volume_dir(const std::vector<MultiModalVolume>& volumes, const std::filesystem::path& dir,
                     const nlohmann::json& extra_manifest);

nlohmann::json split_manifest(const DatasetSplit& split);

}  // namespace dualseg
