#include "dualseg/error.hpp"

namespace dualseg {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::CompressedInput: return "CompressedInput";
    case Errc::HeaderMismatch: return "HeaderMismatch";
    case Errc::MissingSidecar: return "MissingSidecar";
    case Errc::NonBinaryMask: return "NonBinaryMask";
    case Errc::MissingLabel: return "MissingLabel";
    case Errc::CropLargerThanImage: return "CropLargerThanImage";
    case Errc::TooFewPatients: return "TooFewPatients";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::EmptyLabeledSet: return "EmptyLabeledSet";
    case Errc::BadSpatialDims: return "BadSpatialDims";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BottleneckWidthMismatch: return "BottleneckWidthMismatch";
    case Errc::EmptyLabeledBatch: return "EmptyLabeledBatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::NonBinary: return "NonBinary";
    case Errc::EmptyTestSet: return "EmptyTestSet";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace dualseg
