// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace demoseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or channel configuration.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or missing on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or a degenerate numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace demoseg
