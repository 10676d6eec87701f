// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/errors.hpp"

namespace acp {

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

ResourceError::ResourceError(const std::string& what,
                             std::uint64_t required_bytes,
                             std::uint64_t budget_bytes)
    : Error(what + ": needs " + std::to_string(required_bytes) +
            " bytes, budget is " + std::to_string(budget_bytes) + " bytes"),
      required_(required_bytes),
      budget_(budget_bytes) {}

}  // namespace acp
