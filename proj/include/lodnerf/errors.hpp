// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lodnerf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LODNERF_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

LODNERF_DEFINE_ERROR(RayMissesScene);
LODNERF_DEFINE_ERROR(NonPositiveDepth);
LODNERF_DEFINE_ERROR(PointOutsideScene);
LODNERF_DEFINE_ERROR(EmptyObservations);
LODNERF_DEFINE_ERROR(UnknownNode);
LODNERF_DEFINE_ERROR(OutOfNodeBounds);
LODNERF_DEFINE_ERROR(ImageTooSmall);
LODNERF_DEFINE_ERROR(LengthMismatch);
LODNERF_DEFINE_ERROR(NonFiniteLoss);
LODNERF_DEFINE_ERROR(NoSubtreesAtLevel);
LODNERF_DEFINE_ERROR(EmptyMask);
LODNERF_DEFINE_ERROR(UnsupportedCameraModel);
LODNERF_DEFINE_ERROR(UnknownSceneSpec);
LODNERF_DEFINE_ERROR(VersionMismatch);
LODNERF_DEFINE_ERROR(ChecksumMismatch);

#undef LODNERF_DEFINE_ERROR

/// Malformed input text. Carries the offending file and 1-based line.
class ParseError : public Error {
 public:
  ParseError(std::string file, int line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

}  // namespace lodnerf
