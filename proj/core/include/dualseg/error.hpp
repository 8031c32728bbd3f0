#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dualseg {

enum class Errc {
  // volume_io
  BadMagic,
  UnsupportedDatatype,
  TruncatedFile,
  CompressedInput,
  HeaderMismatch,
  MissingSidecar,
  NonBinaryMask,
  // data_pipeline
  MissingLabel,
  CropLargerThanImage,
  TooFewPatients,
  EmptySplit,
  InvalidSpec,
  EmptyLabeledSet,
  // network
  BadSpatialDims,
  ShapeMismatch,
  BottleneckWidthMismatch,
  // objectives / trainer
  EmptyLabeledBatch,
  NonFiniteLoss,
  CorruptCheckpoint,
  // evaluation
  NonBinary,
  EmptyTestSet,
  // cli / misc
  ConfigError,
  IoError,
};

std::string_view to_string(Errc code) noexcept;

/// Exception type thrown by every dualseg component. The code identifies the
/// failure class; what() carries a human-readable diagnostic.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dualseg
