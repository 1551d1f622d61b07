// Copyright 2026 The rqcsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace rqc {

/// Base class for all errors raised by the library. The category maps onto the
/// CLI exit codes (usage 2, format 3, resource guard 4).
class Error : public std::runtime_error {
   public:
    enum class Kind { usage, format, resource };

    Error(Kind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {
    }

    Kind kind() const noexcept {
        return kind_;
    }

    const char *kind_name() const noexcept {
        switch (kind_) {
            case Kind::usage:
                return "usage";
            case Kind::format:
                return "format";
            case Kind::resource:
                return "resource";
        }
        return "unknown";
    }

   private:
    Kind kind_;
};

/// Bad argument or precondition violation.
struct UsageError : Error {
    explicit UsageError(const std::string &what) : Error(Kind::usage, what) {
    }
};

/// Malformed input file or stream. Carries the 1-based line number when known.
struct FormatError : Error {
    FormatError(const std::string &what, size_t line = 0)
        : Error(Kind::format, line ? "line " + std::to_string(line) + ": " + what : what), line(line) {
    }
    size_t line;
};

/// A resource guard was hit (memory bound, qubit cap, envelope overflow).
struct ResourceError : Error {
    explicit ResourceError(const std::string &what) : Error(Kind::resource, what) {
    }
};

}  // namespace rqc
