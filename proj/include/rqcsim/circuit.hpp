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

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rqcsim/error.hpp"
#include "rqcsim/rng.hpp"
#include "rqcsim/text.hpp"

namespace rqc {

using cdouble = std::complex<double>;

// ---------------------------------------------------------------------------
// Gate matrices
// ---------------------------------------------------------------------------

/// Dense unitary on one or two qubits, row-major. For two qubits the row and
/// column index is (first qubit bit << 1) | second qubit bit.
struct GateMatrix {
    int arity = 1;
    std::vector<cdouble> entries;

    size_t dim() const {
        return size_t{1} << arity;
    }

    cdouble at(size_t row, size_t col) const {
        return entries[row * dim() + col];
    }

    /// Max entrywise deviation of U*U^dagger from the identity.
    double unitarity_error() const {
        size_t d = dim();
        double worst = 0;
        for (size_t i = 0; i < d; i++) {
            for (size_t j = 0; j < d; j++) {
                cdouble acc = 0;
                for (size_t k = 0; k < d; k++) {
                    acc += at(i, k) * std::conj(at(j, k));
                }
                worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
            }
        }
        return worst;
    }

    bool is_unitary(double tol = 1e-6) const {
        return entries.size() == dim() * dim() && unitarity_error() <= tol;
    }

    bool operator==(const GateMatrix &) const = default;
};

enum class SingleQubitKind : uint8_t { sqrt_x, sqrt_y, sqrt_w };

inline constexpr std::array<SingleQubitKind, 3> kSingleQubitKinds = {
    SingleQubitKind::sqrt_x, SingleQubitKind::sqrt_y, SingleQubitKind::sqrt_w};

inline std::string_view token_of(SingleQubitKind kind) {
    switch (kind) {
        case SingleQubitKind::sqrt_x:
            return "X2";
        case SingleQubitKind::sqrt_y:
            return "Y2";
        case SingleQubitKind::sqrt_w:
            return "W2";
    }
    return "?";
}

inline std::optional<SingleQubitKind> single_qubit_kind_from(std::string_view tok) {
    if (tok == "X2") return SingleQubitKind::sqrt_x;
    if (tok == "Y2") return SingleQubitKind::sqrt_y;
    if (tok == "W2") return SingleQubitKind::sqrt_w;
    return std::nullopt;
}

/// The three random single-qubit gates sqrt(X), sqrt(Y), sqrt(W).
inline GateMatrix single_qubit_gate(SingleQubitKind kind) {
    const double h = std::numbers::sqrt2 / 2;
    const cdouble i{0, 1};
    GateMatrix g;
    g.arity = 1;
    switch (kind) {
        case SingleQubitKind::sqrt_x:
            g.entries = {h, -i * h, -i * h, h};
            break;
        case SingleQubitKind::sqrt_y:
            g.entries = {h, -h, h, h};
            break;
        case SingleQubitKind::sqrt_w:
            g.entries = {h, -h * h * (1.0 + i), h * h * (1.0 - i), h};
            break;
    }
    return g;
}

/// Parameters of the five-parameter fSim gate, radians.
struct FsimParams {
    double theta = std::numbers::pi / 2;
    double phi = std::numbers::pi / 6;
    double delta_plus = 0;
    double delta_minus = 0;
    double delta_minus_off = 0;

    bool finite() const {
        return std::isfinite(theta) && std::isfinite(phi) && std::isfinite(delta_plus) &&
               std::isfinite(delta_minus) && std::isfinite(delta_minus_off);
    }

    bool operator==(const FsimParams &) const = default;
};

/// fSim(theta, phi, d+, d-, d-off). The |10> diagonal carries e^{i(d+ - d-)} so
/// the matrix is unitary for every parameter choice.
inline GateMatrix fsim(const FsimParams &p) {
    const cdouble i{0, 1};
    auto phase = [&](double angle) { return std::exp(i * angle); };
    double c = std::cos(p.theta);
    double s = std::sin(p.theta);
    GateMatrix g;
    g.arity = 2;
    g.entries.assign(16, 0.0);
    g.entries[0 * 4 + 0] = 1.0;
    g.entries[1 * 4 + 1] = phase(p.delta_plus + p.delta_minus) * c;
    g.entries[1 * 4 + 2] = -i * phase(p.delta_plus - p.delta_minus_off) * s;
    g.entries[2 * 4 + 1] = -i * phase(p.delta_plus + p.delta_minus_off) * s;
    g.entries[2 * 4 + 2] = phase(p.delta_plus - p.delta_minus) * c;
    g.entries[3 * 4 + 3] = phase(2 * p.delta_plus - p.phi);
    return g;
}

inline GateMatrix fsim(double theta, double phi, double d_plus, double d_minus, double d_minus_off) {
    return fsim(FsimParams{theta, phi, d_plus, d_minus, d_minus_off});
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

inline std::pair<int, int> ordered_pair(int a, int b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
}

enum class Pattern : uint8_t { A, B, C, D };

inline char letter_of(Pattern p) {
    return static_cast<char>('A' + static_cast<int>(p));
}

inline std::optional<Pattern> pattern_from(std::string_view tok) {
    if (tok.size() != 1 || tok[0] < 'A' || tok[0] > 'D') {
        return std::nullopt;
    }
    return static_cast<Pattern>(tok[0] - 'A');
}

/// Two-qubit layer labels: the period-8 sequence ABCDCDAB, truncated at `cycles`.
inline std::vector<Pattern> pattern_sequence(int cycles) {
    static constexpr std::array<Pattern, 8> period = {Pattern::A, Pattern::B, Pattern::C, Pattern::D,
                                                      Pattern::C, Pattern::D, Pattern::A, Pattern::B};
    std::vector<Pattern> out;
    for (int c = 0; c < cycles; c++) {
        out.push_back(period[c % 8]);
    }
    return out;
}

struct TopologyQubit {
    int id = 0;
    int x = 0;
    int y = 0;
    bool enabled = true;
    bool operator==(const TopologyQubit &) const = default;
};

struct Coupler {
    int q1 = 0;
    int q2 = 0;
    Pattern label = Pattern::A;
    bool enabled = true;
    bool operator==(const Coupler &) const = default;
};

struct Topology {
    std::vector<TopologyQubit> qubits;
    std::vector<Coupler> couplers;

    /// Topology qubit ids of enabled qubits, in declaration order. Circuit qubit
    /// index i refers to the i-th entry.
    std::vector<int> enabled_ids() const {
        std::vector<int> ids;
        for (const auto &q : qubits) {
            if (q.enabled) {
                ids.push_back(q.id);
            }
        }
        return ids;
    }

    size_t enabled_qubit_count() const {
        return enabled_ids().size();
    }

    std::vector<Coupler> enabled_couplers() const {
        std::vector<Coupler> out;
        for (const auto &c : couplers) {
            if (c.enabled) {
                out.push_back(c);
            }
        }
        return out;
    }

    /// Throws UsageError when an invariant is broken: duplicate ids, couplers on
    /// unknown or disabled qubits, or a label class that is not a matching.
    void validate() const {
        std::map<int, bool> enabled;
        for (const auto &q : qubits) {
            if (!enabled.emplace(q.id, q.enabled).second) {
                throw UsageError("duplicate qubit id " + std::to_string(q.id));
            }
        }
        std::map<std::pair<int, int>, int> seen_pairs;
        std::map<std::pair<int, Pattern>, int> touched;
        for (const auto &c : couplers) {
            auto a = enabled.find(c.q1);
            auto b = enabled.find(c.q2);
            if (a == enabled.end() || b == enabled.end() || c.q1 == c.q2) {
                throw UsageError("coupler references unknown qubit " + std::to_string(c.q1) + "-" +
                                 std::to_string(c.q2));
            }
            auto key = ordered_pair(c.q1, c.q2);
            if (seen_pairs[key]++) {
                throw UsageError("duplicate coupler " + std::to_string(c.q1) + "-" + std::to_string(c.q2));
            }
            if (!c.enabled) {
                continue;
            }
            if (!a->second || !b->second) {
                throw UsageError("enabled coupler touches disabled qubit");
            }
            if (touched[{c.q1, c.label}]++ || touched[{c.q2, c.label}]++) {
                throw UsageError(std::string("pattern ") + letter_of(c.label) + " is not a matching at qubit " +
                                 std::to_string(c.q1) + "-" + std::to_string(c.q2));
            }
        }
    }

    bool operator==(const Topology &) const = default;
};

/// W x H square lattice. Vertical couplers alternate A/B by row parity,
/// horizontal couplers alternate C/D by column parity.
inline Topology grid_topology(int width, int height) {
    if (width < 1 || height < 1) {
        throw UsageError("grid dimensions must be positive");
    }
    Topology t;
    auto id = [&](int x, int y) { return y * width + x; };
    for (int y = 0; y < height; y++) {
        for (int x = 0; x < width; x++) {
            t.qubits.push_back({id(x, y), x, y, true});
        }
    }
    for (int y = 0; y + 1 < height; y++) {
        for (int x = 0; x < width; x++) {
            t.couplers.push_back({id(x, y), id(x, y + 1), y % 2 == 0 ? Pattern::A : Pattern::B, true});
        }
    }
    for (int y = 0; y < height; y++) {
        for (int x = 0; x + 1 < width; x++) {
            t.couplers.push_back({id(x, y), id(x + 1, y), x % 2 == 0 ? Pattern::C : Pattern::D, true});
        }
    }
    return t;
}

namespace detail {

/// Builds a topology from a character map; any non-'-' cell is a qubit and
/// `off` lists (row, col) cells that are present on the chip but disabled.
/// Labels follow the staggered rule: vertical pairs (r,c)-(r+1,c) get A/B by
/// parity of r+c, horizontal pairs get C/D by parity of r+c.
inline Topology staggered_from_map(const std::vector<std::string_view> &rows,
                                   const std::vector<std::pair<int, int>> &off) {
    Topology t;
    int width = 0;
    for (auto r : rows) {
        width = std::max(width, static_cast<int>(r.size()));
    }
    auto present = [&](int r, int c) {
        return r >= 0 && r < static_cast<int>(rows.size()) && c >= 0 && c < static_cast<int>(rows[r].size()) &&
               rows[r][c] != '-';
    };
    auto disabled = [&](int r, int c) { return std::find(off.begin(), off.end(), std::pair{r, c}) != off.end(); };
    auto id = [&](int r, int c) { return r * width + c; };
    for (int r = 0; r < static_cast<int>(rows.size()); r++) {
        for (int c = 0; c < width; c++) {
            if (present(r, c)) {
                t.qubits.push_back({id(r, c), c, r, !disabled(r, c)});
            }
        }
    }
    for (int r = 0; r < static_cast<int>(rows.size()); r++) {
        for (int c = 0; c < width; c++) {
            if (!present(r, c)) {
                continue;
            }
            bool on = !disabled(r, c);
            if (present(r + 1, c)) {
                t.couplers.push_back({id(r, c), id(r + 1, c), (r + c) % 2 == 0 ? Pattern::A : Pattern::B,
                                      on && !disabled(r + 1, c)});
            }
            if (present(r, c + 1)) {
                t.couplers.push_back({id(r, c), id(r, c + 1), (r + c) % 2 == 0 ? Pattern::C : Pattern::D,
                                      on && !disabled(r, c + 1)});
            }
        }
    }
    return t;
}

}  // namespace detail

/// Sycamore: 54-site diamond lattice with one inoperable site, 53 usable qubits.
inline Topology sycamore53() {
    static constexpr std::string_view rows[] = {
        "-----QQ---", "----QQQQ--", "---QQQQQQ-", "--QQQQQQQQ", "-QQQQQQQQQ",
        "QQQQQQQQQ-", "-QQQQQQQ--", "--QQQQQ---", "---QQQ----", "----Q-----",
    };
    return detail::staggered_from_map({std::begin(rows), std::end(rows)}, {{3, 2}});
}

/// Zuchongzhi 2.0: 66-site lattice (11 rows of 6) with 10 sites disabled.
inline Topology zuchongzhi56() {
    static constexpr std::string_view rows[] = {
        "QQQQQQ", "QQQQQQ", "QQQQQQ", "QQQQQQ", "QQQQQQ", "QQQQQQ",
        "QQQQQQ", "QQQQQQ", "QQQQQQ", "QQQQQQ", "QQQQQQ",
    };
    return detail::staggered_from_map({std::begin(rows), std::end(rows)},
                                      {{10, 0}, {10, 1}, {10, 2}, {10, 3}, {10, 4}, {10, 5},
                                       {0, 0}, {0, 5}, {9, 0}, {9, 5}});
}

/// Resolves "sycamore53", "zuchongzhi56", "grid(WxH)" or "gridWxH".
inline Topology builtin_topology(std::string_view name) {
    if (name == "sycamore53") {
        return sycamore53();
    }
    if (name == "zuchongzhi56") {
        return zuchongzhi56();
    }
    std::string_view rest = name;
    if (rest.starts_with("grid")) {
        rest.remove_prefix(4);
        bool paren = rest.starts_with("(");
        if (paren) {
            if (!rest.ends_with(")")) {
                throw UsageError("unknown topology '" + std::string(name) + "'");
            }
            rest = rest.substr(1, rest.size() - 2);
        }
        auto x = rest.find('x');
        if (x != std::string_view::npos) {
            int w = 0, h = 0;
            auto a = std::from_chars(rest.data(), rest.data() + x, w);
            auto b = std::from_chars(rest.data() + x + 1, rest.data() + rest.size(), h);
            if (a.ec == std::errc() && a.ptr == rest.data() + x && b.ec == std::errc() &&
                b.ptr == rest.data() + rest.size() && w > 0 && h > 0) {
                return grid_topology(w, h);
            }
        }
    }
    throw UsageError("unknown topology '" + std::string(name) + "'");
}

inline std::string serialize_topology(const Topology &t) {
    std::string out;
    for (const auto &q : t.qubits) {
        out += "qubit " + std::to_string(q.id) + " " + std::to_string(q.x) + " " + std::to_string(q.y) +
               (q.enabled ? " on\n" : " off\n");
    }
    for (const auto &c : t.couplers) {
        out += "coupler " + std::to_string(c.q1) + " " + std::to_string(c.q2) + " " + letter_of(c.label) +
               (c.enabled ? " on\n" : " off\n");
    }
    return out;
}

inline Topology parse_topology(std::string_view text) {
    Topology t;
    text::LineReader reader(text);
    std::string_view line;
    auto on_off = [&](std::string_view tok) {
        if (tok == "on") return true;
        if (tok == "off") return false;
        throw FormatError("expected on|off, got '" + std::string(tok) + "'", reader.line_no());
    };
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) {
            continue;
        }
        size_t ln = reader.line_no();
        if (tok[0] == "qubit" && tok.size() == 5) {
            t.qubits.push_back({text::parse_int<int>(tok[1], ln), text::parse_int<int>(tok[2], ln),
                                text::parse_int<int>(tok[3], ln), on_off(tok[4])});
        } else if (tok[0] == "coupler" && tok.size() == 5) {
            auto label = pattern_from(tok[3]);
            if (!label) {
                throw FormatError("unknown pattern label '" + std::string(tok[3]) + "'", ln);
            }
            t.couplers.push_back(
                {text::parse_int<int>(tok[1], ln), text::parse_int<int>(tok[2], ln), *label, on_off(tok[4])});
        } else {
            throw FormatError("unrecognized topology line", ln);
        }
    }
    try {
        t.validate();
    } catch (const UsageError &e) {
        throw FormatError(e.what());
    }
    return t;
}

// ---------------------------------------------------------------------------
// Circuits
// ---------------------------------------------------------------------------

struct SingleQubitOp {
    int qubit = 0;
    SingleQubitKind kind = SingleQubitKind::sqrt_x;
    bool operator==(const SingleQubitOp &) const = default;
};

struct TwoQubitOp {
    int q1 = 0;
    int q2 = 0;
    FsimParams params;
    bool operator==(const TwoQubitOp &) const = default;
};

/// One layer of the circuit: either single-qubit gates (`two_qubit == false`)
/// or an fSim layer on a disjoint set of qubit pairs carrying a pattern label.
struct Layer {
    bool two_qubit = false;
    Pattern label = Pattern::A;
    std::vector<SingleQubitOp> singles;
    std::vector<TwoQubitOp> pairs;
    bool operator==(const Layer &) const = default;
};

struct Circuit {
    int n_qubits = 0;
    int cycles = 0;
    uint64_t seed = 0;
    std::vector<Layer> layers;

    size_t two_qubit_gate_count() const {
        size_t n = 0;
        for (const auto &l : layers) {
            n += l.pairs.size();
        }
        return n;
    }

    std::vector<Pattern> two_qubit_labels() const {
        std::vector<Pattern> out;
        for (const auto &l : layers) {
            if (l.two_qubit) {
                out.push_back(l.label);
            }
        }
        return out;
    }

    /// Throws UsageError on: a qubit index out of range, a qubit used twice in
    /// one layer, a non-unitary gate, a two-qubit layer count different from
    /// `cycles`, or labels deviating from the ABCDCDAB sequence.
    void validate() const {
        if (n_qubits < 0 || cycles < 0) {
            throw UsageError("negative qubit or cycle count");
        }
        std::vector<int> seen(static_cast<size_t>(n_qubits), -1);
        int layer_no = 0;
        auto touch = [&](int q) {
            if (q < 0 || q >= n_qubits) {
                throw UsageError("qubit index " + std::to_string(q) + " out of range");
            }
            if (seen[q] == layer_no) {
                throw UsageError("qubit " + std::to_string(q) + " used twice in layer " + std::to_string(layer_no));
            }
            seen[q] = layer_no;
        };
        for (const auto &l : layers) {
            if (l.two_qubit) {
                for (const auto &g : l.pairs) {
                    touch(g.q1);
                    touch(g.q2);
                    if (!g.params.finite() || !fsim(g.params).is_unitary()) {
                        throw UsageError("non-unitary fsim gate");
                    }
                }
            } else {
                for (const auto &g : l.singles) {
                    touch(g.qubit);
                }
            }
            layer_no++;
        }
        auto labels = two_qubit_labels();
        if (static_cast<int>(labels.size()) != cycles) {
            throw UsageError("expected " + std::to_string(cycles) + " two-qubit layers, found " +
                             std::to_string(labels.size()));
        }
        if (labels != pattern_sequence(cycles)) {
            throw UsageError("two-qubit layer labels do not follow ABCDCDAB");
        }
    }

    bool operator==(const Circuit &) const = default;
};

struct GenerateOptions {
    /// Default parameters for every coupler without an entry in `per_coupler`.
    FsimParams default_params;
    /// Keyed by (topology id, topology id) with the smaller id first.
    std::map<std::pair<int, int>, FsimParams> per_coupler;
    /// Single-qubit layer after the last two-qubit layer.
    bool trailing_single_layer = true;
};

/// Seeded random circuit: i.i.d. sqrt(X)/sqrt(Y)/sqrt(W) layers interleaved with
/// fSim layers on the enabled couplers of the pattern given by ABCDCDAB.
///
/// The gate kind on (layer l, qubit q) is drawn from the stream
/// CounterRng(seed).split(l, q), so it does not depend on generation order.
inline Circuit generate_rqc(const Topology &topology, int cycles, uint64_t seed,
                            const GenerateOptions &options = {}) {
    if (cycles < 1) {
        throw UsageError("cycles must be >= 1");
    }
    topology.validate();
    auto ids = topology.enabled_ids();
    if (ids.empty()) {
        throw UsageError("topology has no enabled qubits");
    }
    std::map<int, int> index_of;
    for (size_t i = 0; i < ids.size(); i++) {
        index_of[ids[i]] = static_cast<int>(i);
    }

    Circuit c;
    c.n_qubits = static_cast<int>(ids.size());
    c.cycles = cycles;
    c.seed = seed;
    CounterRng root(seed);
    int sq_layer = 0;
    auto random_single_layer = [&]() {
        Layer l;
        for (int q = 0; q < c.n_qubits; q++) {
            auto stream = root.split(static_cast<uint64_t>(sq_layer), static_cast<uint64_t>(q));
            l.singles.push_back({q, kSingleQubitKinds[stream.below(3)]});
        }
        sq_layer++;
        return l;
    };
    for (Pattern label : pattern_sequence(cycles)) {
        c.layers.push_back(random_single_layer());
        Layer tq;
        tq.two_qubit = true;
        tq.label = label;
        for (const auto &cp : topology.couplers) {
            if (!cp.enabled || cp.label != label) {
                continue;
            }
            auto it = options.per_coupler.find(ordered_pair(cp.q1, cp.q2));
            FsimParams p = it == options.per_coupler.end() ? options.default_params : it->second;
            tq.pairs.push_back({index_of.at(cp.q1), index_of.at(cp.q2), p});
        }
        c.layers.push_back(std::move(tq));
    }
    if (options.trailing_single_layer) {
        c.layers.push_back(random_single_layer());
    }
    return c;
}

/// Reads a per-coupler fSim table: lines `<id1> <id2> <theta> <phi> <dplus>
/// <dminus> <dmoff>`, `#` comments allowed.
inline std::map<std::pair<int, int>, FsimParams> parse_fsim_table(std::string_view text) {
    std::map<std::pair<int, int>, FsimParams> out;
    text::LineReader reader(text);
    std::string_view line;
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) {
            continue;
        }
        size_t ln = reader.line_no();
        if (tok.size() != 7) {
            throw FormatError("fsim table rows need 7 fields", ln);
        }
        int a = text::parse_int<int>(tok[0], ln);
        int b = text::parse_int<int>(tok[1], ln);
        FsimParams p{text::parse_double(tok[2], ln), text::parse_double(tok[3], ln), text::parse_double(tok[4], ln),
                     text::parse_double(tok[5], ln), text::parse_double(tok[6], ln)};
        out[ordered_pair(a, b)] = p;
    }
    return out;
}

inline std::string serialize_circuit(const Circuit &c) {
    std::string out = "qubits " + std::to_string(c.n_qubits) + " cycles " + std::to_string(c.cycles) + " seed " +
                      std::to_string(c.seed) + "\n";
    for (const auto &l : c.layers) {
        if (l.two_qubit) {
            out += std::string("layer tq ") + letter_of(l.label) + "\n";
            for (const auto &g : l.pairs) {
                out += "q" + std::to_string(g.q1) + " q" + std::to_string(g.q2) + " fsim " +
                       text::format_double(g.params.theta) + " " + text::format_double(g.params.phi) + " " +
                       text::format_double(g.params.delta_plus) + " " + text::format_double(g.params.delta_minus) +
                       " " + text::format_double(g.params.delta_minus_off) + "\n";
            }
        } else {
            out += "layer sq\n";
            for (const auto &g : l.singles) {
                out += "q" + std::to_string(g.qubit) + " " + std::string(token_of(g.kind)) + "\n";
            }
        }
    }
    return out;
}

inline Circuit parse_circuit(std::string_view text) {
    Circuit c;
    text::LineReader reader(text);
    std::string_view line;
    bool have_header = false;
    Layer *current = nullptr;
    auto qubit = [&](std::string_view tok, size_t ln) {
        if (tok.size() < 2 || tok[0] != 'q') {
            throw FormatError("expected qubit token q<i>, got '" + std::string(tok) + "'", ln);
        }
        int q = text::parse_int<int>(tok.substr(1), ln);
        if (q < 0 || q >= c.n_qubits) {
            throw FormatError("qubit " + std::string(tok) + " out of range", ln);
        }
        return q;
    };
    std::vector<size_t> layer_lines;
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) {
            continue;
        }
        size_t ln = reader.line_no();
        if (!have_header) {
            if (tok.size() != 6 || tok[0] != "qubits" || tok[2] != "cycles" || tok[4] != "seed") {
                throw FormatError("expected header 'qubits N cycles D seed S'", ln);
            }
            c.n_qubits = text::parse_int<int>(tok[1], ln);
            c.cycles = text::parse_int<int>(tok[3], ln);
            c.seed = text::parse_int<uint64_t>(tok[5], ln);
            have_header = true;
            continue;
        }
        if (tok[0] == "layer") {
            Layer l;
            if (tok.size() == 2 && tok[1] == "sq") {
                l.two_qubit = false;
            } else if (tok.size() == 3 && tok[1] == "tq") {
                auto label = pattern_from(tok[2]);
                if (!label) {
                    throw FormatError("unknown pattern label '" + std::string(tok[2]) + "'", ln);
                }
                l.two_qubit = true;
                l.label = *label;
            } else {
                throw FormatError("malformed layer line", ln);
            }
            c.layers.push_back(std::move(l));
            layer_lines.push_back(ln);
            current = &c.layers.back();
            continue;
        }
        if (current == nullptr) {
            throw FormatError("gate outside of a layer block", ln);
        }
        if (current->two_qubit) {
            if (tok.size() != 8 || tok[2] != "fsim") {
                throw FormatError("expected 'q<i> q<j> fsim theta phi dplus dminus dmoff'", ln);
            }
            TwoQubitOp g{qubit(tok[0], ln), qubit(tok[1], ln),
                         FsimParams{text::parse_double(tok[3], ln), text::parse_double(tok[4], ln),
                                    text::parse_double(tok[5], ln), text::parse_double(tok[6], ln),
                                    text::parse_double(tok[7], ln)}};
            if (g.q1 == g.q2) {
                throw FormatError("fsim on a single qubit", ln);
            }
            if (!g.params.finite() || !fsim(g.params).is_unitary()) {
                throw FormatError("fsim gate is not unitary", ln);
            }
            current->pairs.push_back(g);
        } else {
            if (tok.size() != 2) {
                throw FormatError("expected 'q<i> <X2|Y2|W2>'", ln);
            }
            int q = qubit(tok[0], ln);
            auto kind = single_qubit_kind_from(tok[1]);
            if (!kind) {
                throw FormatError("unknown gate token '" + std::string(tok[1]) + "'", ln);
            }
            current->singles.push_back({q, *kind});
        }
    }
    if (!have_header) {
        throw FormatError("empty circuit file");
    }
    // Report structural violations against the offending layer's line.
    for (size_t i = 0; i < c.layers.size(); i++) {
        std::vector<int> used(static_cast<size_t>(c.n_qubits), 0);
        auto check = [&](int q) {
            if (used[q]++) {
                throw FormatError("qubit q" + std::to_string(q) + " acted on twice in one layer", layer_lines[i]);
            }
        };
        for (const auto &g : c.layers[i].singles) check(g.qubit);
        for (const auto &g : c.layers[i].pairs) {
            check(g.q1);
            check(g.q2);
        }
    }
    try {
        c.validate();
    } catch (const UsageError &e) {
        throw FormatError(e.what());
    }
    return c;
}

}  // namespace rqc
