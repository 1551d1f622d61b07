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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "rqcsim/error.hpp"

namespace rqc::text {

/// Splits on blanks, dropping a trailing `#` comment.
inline std::vector<std::string_view> tokenize(std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
    }
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            i++;
        }
        size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') {
            j++;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

template <typename Int>
Int parse_int(std::string_view tok, size_t line_no) {
    Int value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw FormatError("expected integer, got '" + std::string(tok) + "'", line_no);
    }
    return value;
}

inline double parse_double(std::string_view tok, size_t line_no) {
    double value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw FormatError("expected number, got '" + std::string(tok) + "'", line_no);
    }
    return value;
}

/// Splits a comma-separated list; an empty string or "-" is the empty list.
inline std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    if (s.empty() || s == "-") {
        return out;
    }
    size_t i = 0;
    while (true) {
        size_t j = s.find(',', i);
        out.push_back(s.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
        if (j == std::string_view::npos) {
            break;
        }
        i = j + 1;
    }
    return out;
}

/// Shortest-round-trip-safe decimal rendering of a double.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Iterates over lines of a text blob, tracking 1-based line numbers.
class LineReader {
   public:
    explicit LineReader(std::string_view text) : text_(text) {
    }

    bool next(std::string_view &line) {
        if (pos_ >= text_.size()) {
            return false;
        }
        size_t end = text_.find('\n', pos_);
        if (end == std::string_view::npos) {
            end = text_.size();
        }
        line = text_.substr(pos_, end - pos_);
        pos_ = end + 1;
        line_no_++;
        return true;
    }

    size_t line_no() const {
        return line_no_;
    }

   private:
    std::string_view text_;
    size_t pos_ = 0;
    size_t line_no_ = 0;
};

}  // namespace rqc::text
