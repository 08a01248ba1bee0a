// Copyright 2026 The whitenlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace whitenlab {

enum class Errc {
  NonSquare,
  Asymmetric,
  NonConvergence,
  NotPositiveDefinite,
  DegenerateSpectrum,
  SeedNotScalar,
  ShapeMismatch,
  CovarianceSingular,
  GramSingular,
  BatchTooSmall,
  NotDivisible,
  ZeroVector,
  DuplicateEpoch,
  TooFewSnapshots,
  PreconditionViolation,
  InvalidArgument,
  ParseError,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::NonSquare: return "NonSquare";
    case Errc::Asymmetric: return "Asymmetric";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::DegenerateSpectrum: return "DegenerateSpectrum";
    case Errc::SeedNotScalar: return "SeedNotScalar";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::CovarianceSingular: return "CovarianceSingular";
    case Errc::GramSingular: return "GramSingular";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::NotDivisible: return "NotDivisible";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DuplicateEpoch: return "DuplicateEpoch";
    case Errc::TooFewSnapshots: return "TooFewSnapshots";
    case Errc::PreconditionViolation: return "PreconditionViolation";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so it survives being printed alone.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Numerical errors (as opposed to usage errors) are the ones a caller may
/// reasonably retry with jitter or a larger shrinkage.
inline bool is_numerical(Errc code) {
  switch (code) {
    case Errc::NonConvergence:
    case Errc::NotPositiveDefinite:
    case Errc::DegenerateSpectrum:
    case Errc::CovarianceSingular:
    case Errc::GramSingular:
    case Errc::ZeroVector:
      return true;
    default:
      return false;
  }
}

}  // namespace whitenlab
