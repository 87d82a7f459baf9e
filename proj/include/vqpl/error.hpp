// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vqpl {

enum class Errc {
  // geometry
  degenerate_geometry,
  too_short,
  invalid_angle,
  shape_mismatch,
  degenerate_configuration,
  // ingest
  no_backbone,
  malformed_record,
  bad_ratios,
  // numerics / engine
  numeric_error,
  not_scalar,
  odd_head_dim,
  too_long,
  length_mismatch,
  // quantizer
  empty_codebook,
  batch_too_small,
  non_positive_temperature,
  bad_step,
  not_normalized,
  unknown_code,
  // inpainting
  bad_span,
  // io / cli
  io_error,
  format_error,
  usage_error,
};

/// Coarse class used by the CLI to choose an exit status.
enum class ErrorClass { usage, data, numeric };

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::degenerate_geometry: return "DegenerateGeometry";
    case Errc::too_short: return "TooShort";
    case Errc::invalid_angle: return "InvalidAngle";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::degenerate_configuration: return "DegenerateConfiguration";
    case Errc::no_backbone: return "NoBackbone";
    case Errc::malformed_record: return "MalformedRecord";
    case Errc::bad_ratios: return "BadRatios";
    case Errc::numeric_error: return "NumericError";
    case Errc::not_scalar: return "NotScalar";
    case Errc::odd_head_dim: return "OddHeadDim";
    case Errc::too_long: return "TooLong";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::empty_codebook: return "EmptyCodebook";
    case Errc::batch_too_small: return "BatchTooSmall";
    case Errc::non_positive_temperature: return "NonPositiveTemperature";
    case Errc::bad_step: return "BadStep";
    case Errc::not_normalized: return "NotNormalized";
    case Errc::unknown_code: return "UnknownCode";
    case Errc::bad_span: return "BadSpan";
    case Errc::io_error: return "IoError";
    case Errc::format_error: return "FormatError";
    case Errc::usage_error: return "UsageError";
  }
  return "Unknown";
}

constexpr ErrorClass error_class(Errc code) noexcept {
  switch (code) {
    case Errc::usage_error:
      return ErrorClass::usage;
    case Errc::numeric_error:
    case Errc::not_scalar:
      return ErrorClass::numeric;
    default:
      return ErrorClass::data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace vqpl
