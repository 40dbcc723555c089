/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <stdexcept>
#include <string>

namespace chils {

/// Raised by every module for invalid input, malformed files and I/O failures.
/// Messages are meant to be shown to the user verbatim.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace chils
