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

// Run configuration shared by the command-line tools.
//
// File format: one `key = value` per line, '#' starts a comment. Values given
// on the command line override the file, which overrides the defaults.

#include <cstdlib>
#include <string>
#include <string_view>

#include "rqcsim/engine.hpp"
#include "rqcsim/error.hpp"
#include "rqcsim/order.hpp"
#include "rqcsim/text.hpp"

namespace rqc {

/// Environment variable naming a default configuration file.
inline constexpr const char *kConfigEnv = "RQCSIM_CONFIG";

struct RunConfig {
    uint64_t seed = 0;
    int max_size_log2 = 28;
    uint64_t n_candidates = 100;
    unsigned workers = 1;
    Precision precision = Precision::single;
    unsigned batch_log2 = 13;
    int open_count = 6;
    double ceiling = 20;
    double imbalance = 0.1;
    uint64_t leaf_size = 8;
    uint64_t reconfigure_size = 10;
    std::string circuit_path;
    std::string plan_path;
    std::string output_path;

    /// Throws UsageError naming the first field outside its range.
    void validate() const {
        auto need = [](bool ok, const char *what) {
            if (!ok) throw UsageError(std::string("config: ") + what);
        };
        need(max_size_log2 >= 1 && max_size_log2 <= 40, "max_size_log2 must be in [1, 40]");
        need(n_candidates >= 1 && n_candidates <= 1000000, "n_candidates must be in [1, 1000000]");
        need(workers >= 1 && workers <= 1024, "workers must be in [1, 1024]");
        need(batch_log2 >= 1 && batch_log2 <= 30, "batch_log2 must be in [1, 30]");
        need(open_count >= 0 && open_count <= 20, "open_count must be in [0, 20]");
        need(ceiling > 1, "ceiling must exceed 1");
        need(imbalance >= 0 && imbalance < 0.5, "imbalance must be in [0, 0.5)");
        need(leaf_size >= 1 && leaf_size <= kExhaustiveLimit, "leaf_size must be in [1, 12]");
        need(reconfigure_size <= 16, "reconfigure_size must be at most 16");
    }

    OrderOptions order_options() const {
        OrderOptions o;
        o.max_size_log2 = max_size_log2;
        o.n_candidates = n_candidates;
        o.seed = seed;
        o.imbalance = imbalance;
        o.leaf_size = leaf_size;
        o.reconfigure_size = reconfigure_size;
        return o;
    }

    ExecOptions exec_options() const {
        ExecOptions e;
        e.workers = workers;
        e.batch_log2 = batch_log2;
        e.precision = precision;
        return e;
    }

    EngineOptions engine_options() const {
        EngineOptions e;
        e.order = order_options();
        e.exec = exec_options();
        e.open_cap = std::max<size_t>(6, static_cast<size_t>(open_count));
        return e;
    }

    /// Sets one field from its textual value.
    void set(std::string_view key, std::string_view value, size_t line = 0) {
        if (key == "seed") {
            seed = text::parse_int<uint64_t>(value, line);
        } else if (key == "max_size_log2") {
            max_size_log2 = text::parse_int<int>(value, line);
        } else if (key == "n_candidates") {
            n_candidates = text::parse_int<uint64_t>(value, line);
        } else if (key == "workers") {
            workers = text::parse_int<unsigned>(value, line);
        } else if (key == "precision") {
            try {
                precision = precision_from(value);
            } catch (const UsageError &e) {
                throw FormatError(e.what(), line);
            }
        } else if (key == "batch_log2") {
            batch_log2 = text::parse_int<unsigned>(value, line);
        } else if (key == "open_count") {
            open_count = text::parse_int<int>(value, line);
        } else if (key == "ceiling") {
            ceiling = text::parse_double(value, line);
        } else if (key == "imbalance") {
            imbalance = text::parse_double(value, line);
        } else if (key == "leaf_size") {
            leaf_size = text::parse_int<uint64_t>(value, line);
        } else if (key == "reconfigure_size") {
            reconfigure_size = text::parse_int<uint64_t>(value, line);
        } else if (key == "circuit") {
            circuit_path = value;
        } else if (key == "plan") {
            plan_path = value;
        } else if (key == "output") {
            output_path = value;
        } else {
            throw FormatError("unknown config key '" + std::string(key) + "'", line);
        }
    }
};

inline std::string serialize_config(const RunConfig &c) {
    std::string out;
    auto put = [&](const char *k, const std::string &v) { out += std::string(k) + " = " + v + "\n"; };
    put("seed", std::to_string(c.seed));
    put("max_size_log2", std::to_string(c.max_size_log2));
    put("n_candidates", std::to_string(c.n_candidates));
    put("workers", std::to_string(c.workers));
    put("precision", std::string(precision_name(c.precision)));
    put("batch_log2", std::to_string(c.batch_log2));
    put("open_count", std::to_string(c.open_count));
    put("ceiling", text::format_double(c.ceiling));
    put("imbalance", text::format_double(c.imbalance));
    put("leaf_size", std::to_string(c.leaf_size));
    put("reconfigure_size", std::to_string(c.reconfigure_size));
    if (!c.circuit_path.empty()) put("circuit", c.circuit_path);
    if (!c.plan_path.empty()) put("plan", c.plan_path);
    if (!c.output_path.empty()) put("output", c.output_path);
    return out;
}

/// Applies the settings in `text` on top of `base`.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
    text::LineReader reader(text);
    std::string_view line;
    while (reader.next(line)) {
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        auto trim = [](std::string_view s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string_view::npos) return std::string_view{};
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string_view::npos) throw FormatError("expected 'key = value'", reader.line_no());
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw FormatError("expected 'key = value'", reader.line_no());
        base.set(key, value, reader.line_no());
    }
    return base;
}

/// Path of the default config file from the environment, or empty.
inline std::string config_path_from_env() {
    const char *p = std::getenv(kConfigEnv);
    return p ? std::string(p) : std::string();
}

}  // namespace rqc
