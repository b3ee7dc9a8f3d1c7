// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tmlga {

// Base of every error thrown by this library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor rank/shape mismatches and empty inputs.
struct shape_error : error {
  using error::error;
};

// Values outside an operation's domain: log of a non-positive entry,
// probabilities outside [0,1), indices or times out of range.
struct domain_error : error {
  using error::error;
};

// Malformed or truncated files: manifests, TMLF feature files, embedding
// tables, checkpoints.
struct format_error : error {
  using error::error;
};

// Unusable run configuration: empty dataset, vocabulary mismatch, divergence.
struct config_error : error {
  using error::error;
};

}  // namespace tmlga
