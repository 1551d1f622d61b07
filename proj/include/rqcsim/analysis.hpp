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
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rqcsim/circuit.hpp"
#include "rqcsim/engine.hpp"
#include "rqcsim/error.hpp"
#include "rqcsim/rng.hpp"
#include "rqcsim/text.hpp"

namespace rqc {

// ---------------------------------------------------------------------------
// Schrodinger simulation
// ---------------------------------------------------------------------------

inline constexpr int kStatevectorMaxQubits = 26;

/// Full output state. Basis index bit (n - 1 - q) is qubit q, so reading the
/// index in binary gives the bitstring with qubit 0 first.
inline std::vector<std::complex<double>> statevector_simulate(const Circuit &c,
                                                              int max_qubits = kStatevectorMaxQubits) {
    const int n = c.n_qubits;
    if (n > max_qubits) {
        throw ResourceError("statevector limited to " + std::to_string(max_qubits) + " qubits, circuit has " +
                            std::to_string(n));
    }
    using cd = std::complex<double>;
    std::vector<cd> psi(size_t{1} << n, cd{});
    psi[0] = 1;
    const size_t dim = psi.size();
    for (const auto &layer : c.layers) {
        for (const auto &op : layer.singles) {
            const auto g = single_qubit_gate(op.kind).entries;
            const size_t stride = size_t{1} << (n - 1 - op.qubit);
            for (size_t base = 0; base < dim; base += 2 * stride) {
                for (size_t i = base; i < base + stride; i++) {
                    cd a = psi[i], b = psi[i + stride];
                    psi[i] = g[0] * a + g[1] * b;
                    psi[i + stride] = g[2] * a + g[3] * b;
                }
            }
        }
        for (const auto &op : layer.pairs) {
            const auto g = fsim(op.params).entries;
            const size_t s1 = size_t{1} << (n - 1 - op.q1);
            const size_t s2 = size_t{1} << (n - 1 - op.q2);
            for (size_t i = 0; i < dim; i++) {
                if (i & (s1 | s2)) continue;
                const size_t idx[4] = {i, i | s2, i | s1, i | s1 | s2};
                const cd v[4] = {psi[idx[0]], psi[idx[1]], psi[idx[2]], psi[idx[3]]};
                for (int r = 0; r < 4; r++) {
                    psi[idx[r]] = g[4 * r] * v[0] + g[4 * r + 1] * v[1] + g[4 * r + 2] * v[2] + g[4 * r + 3] * v[3];
                }
            }
        }
    }
    return psi;
}

inline size_t bitstring_index(std::string_view bits) {
    size_t idx = 0;
    for (char ch : bits) idx = (idx << 1) | static_cast<size_t>(ch == '1');
    return idx;
}

inline std::string index_bitstring(size_t idx, int n) {
    std::string s(n, '0');
    for (int q = 0; q < n; q++) s[q] = ((idx >> (n - 1 - q)) & 1) ? '1' : '0';
    return s;
}

// ---------------------------------------------------------------------------
// XEB and Porter-Thomas
// ---------------------------------------------------------------------------

struct XebEstimate {
    double fidelity = 0;
    double std_error = 0;
};

/// Linear XEB: F = N * mean(p) - 1 with N = 2^n, and standard error
/// N * sd(p) / sqrt(count) using the sample standard deviation.
inline XebEstimate xeb_fidelity(std::span<const double> probabilities, int n_qubits) {
    if (probabilities.empty()) throw UsageError("xeb needs at least one sample");
    const double big_n = std::ldexp(1.0, n_qubits);
    const double m = static_cast<double>(probabilities.size());
    double mean = 0;
    for (double p : probabilities) {
        if (!(p >= 0)) throw UsageError("probabilities must be non-negative");
        mean += p;
    }
    mean /= m;
    double var = 0;
    for (double p : probabilities) var += (p - mean) * (p - mean);
    XebEstimate e;
    e.fidelity = big_n * mean - 1;
    e.std_error = probabilities.size() > 1 ? big_n * std::sqrt(var / (m - 1)) / std::sqrt(m) : 0.0;
    return e;
}

/// Density of x = N p for bitstrings from a device of fidelity F:
/// (F x + 1 - F) e^{-x}.
inline double porter_thomas_pdf(double x, double fidelity) {
    return (fidelity * x + (1 - fidelity)) * std::exp(-x);
}

inline double porter_thomas_cdf(double x, double fidelity) {
    if (x <= 0) return 0;
    return 1 - std::exp(-x) * (1 + fidelity * x);
}

/// Kolmogorov-Smirnov distance between the empirical distribution of `xs`
/// and the Porter-Thomas mixture at `fidelity`.
inline double ks_statistic(std::vector<double> xs, double fidelity) {
    if (xs.empty()) throw UsageError("ks statistic needs samples");
    std::sort(xs.begin(), xs.end());
    const double m = static_cast<double>(xs.size());
    double d = 0;
    for (size_t i = 0; i < xs.size(); i++) {
        double f = porter_thomas_cdf(xs[i], fidelity);
        d = std::max({d, (i + 1) / m - f, f - i / m});
    }
    return d;
}

struct HistogramBin {
    double left = 0;
    double right = 0;
    uint64_t count = 0;
    /// Mean of the model density over the bin.
    double model_density = 0;
};

/// Equal-width histogram of `xs` over [0, max_x); values beyond the range go
/// to the last bin.
inline std::vector<HistogramBin> histogram(const std::vector<double> &xs, double fidelity, size_t bins = 40,
                                           double max_x = 10.0) {
    if (bins == 0 || !(max_x > 0)) throw UsageError("histogram needs bins and a positive range");
    std::vector<HistogramBin> out(bins);
    const double w = max_x / static_cast<double>(bins);
    for (size_t i = 0; i < bins; i++) {
        out[i].left = w * static_cast<double>(i);
        out[i].right = w * static_cast<double>(i + 1);
        out[i].model_density =
            (porter_thomas_cdf(out[i].right, fidelity) - porter_thomas_cdf(out[i].left, fidelity)) / w;
    }
    for (double x : xs) {
        size_t b = std::min(bins - 1, static_cast<size_t>(std::max(0.0, x) / w));
        out[b].count++;
    }
    return out;
}

inline std::string histogram_csv(const std::vector<HistogramBin> &h) {
    std::string out = "bin_left,bin_right,count,model_density\n";
    for (const auto &b : h) {
        out += text::format_double(b.left) + "," + text::format_double(b.right) + "," + std::to_string(b.count) + "," +
               text::format_double(b.model_density) + "\n";
    }
    return out;
}

struct XebReport {
    int n_qubits = 0;
    uint64_t n_samples = 0;
    double fidelity = 0;
    double std_error = 0;
    std::vector<HistogramBin> histogram;
    double ks_statistic = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n_qubits"] = n_qubits;
        j["n_samples"] = n_samples;
        j["fidelity"] = fidelity;
        j["std_error"] = std_error;
        j["ks_statistic"] = ks_statistic;
        auto &h = j["histogram"] = nlohmann::ordered_json::array();
        for (const auto &b : histogram) {
            h.push_back({{"bin_left", b.left}, {"bin_right", b.right}, {"count", b.count},
                         {"model_density", b.model_density}});
        }
        return j;
    }
};

/// Report for sampled bitstrings with ideal probabilities `p`. The KS
/// distance is taken against the model at the measured fidelity clamped to
/// [0, 1].
inline XebReport xeb_report(const std::vector<double> &p, int n_qubits, size_t bins = 40) {
    auto est = xeb_fidelity(p, n_qubits);
    const double big_n = std::ldexp(1.0, n_qubits);
    std::vector<double> xs(p.size());
    for (size_t i = 0; i < p.size(); i++) xs[i] = big_n * p[i];
    XebReport r;
    r.n_qubits = n_qubits;
    r.n_samples = p.size();
    r.fidelity = est.fidelity;
    r.std_error = est.std_error;
    double f = std::clamp(est.fidelity, 0.0, 1.0);
    r.ks_statistic = ks_statistic(xs, f);
    r.histogram = histogram(xs, f, bins);
    return r;
}

// ---------------------------------------------------------------------------
// Bitstring files: one bitstring per line, characters '0' and '1'
// ---------------------------------------------------------------------------

inline std::vector<std::string> parse_bitstrings(std::string_view text, std::optional<int> n_qubits = std::nullopt) {
    std::vector<std::string> out;
    text::LineReader reader(text);
    std::string_view line;
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) continue;
        if (tok.size() != 1) throw FormatError("expected one bitstring per line", reader.line_no());
        auto s = tok[0];
        if (s.find_first_not_of("01") != std::string_view::npos) {
            throw FormatError("bitstring must contain only 0 and 1", reader.line_no());
        }
        if (n_qubits && s.size() != static_cast<size_t>(*n_qubits)) {
            throw FormatError("bitstring has length " + std::to_string(s.size()) + ", expected " +
                                  std::to_string(*n_qubits),
                              reader.line_no());
        }
        if (!out.empty() && out.front().size() != s.size()) {
            throw FormatError("bitstring lengths differ", reader.line_no());
        }
        out.emplace_back(s);
    }
    return out;
}

inline std::string serialize_bitstrings(const std::vector<std::string> &bits) {
    std::string out;
    for (const auto &b : bits) out += b + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Amplitudes of the 2^k bitstrings that share the given closed bits, where
/// the open qubits are the last k (entry j sets them to the binary digits of
/// j, first open qubit most significant).
using BatchProvider = std::function<std::vector<std::complex<double>>(std::string_view fixed_bits)>;

struct FrugalOptions {
    uint64_t n_samples = 1000;
    int open_count = 6;
    /// Rejection envelope: a proposal x = N p is kept with probability x / M.
    double ceiling = 20;
    uint64_t seed = 0;
};

struct FrugalResult {
    std::vector<std::string> bitstrings;
    uint64_t batches = 0;
    uint64_t proposals = 0;

    double acceptance_rate() const {
        return proposals ? static_cast<double>(bitstrings.size()) / static_cast<double>(proposals) : 0.0;
    }
};

/// Rejection sampling against the uniform proposal. Each round draws closed
/// bits uniformly, evaluates one amplitude batch over the open qubits and
/// keeps every entry independently with probability N p / M. Proposals with
/// N p > M cannot be represented and raise a resource error.
inline FrugalResult frugal_sample(int n_qubits, const BatchProvider &provider, const FrugalOptions &opt) {
    if (!(opt.ceiling > 1)) throw UsageError("rejection ceiling must exceed 1");
    if (opt.open_count < 0 || opt.open_count > n_qubits) throw UsageError("open count out of range");
    const int closed = n_qubits - opt.open_count;
    const double big_n = std::ldexp(1.0, n_qubits);
    CounterRng rng(opt.seed);
    FrugalResult out;
    out.bitstrings.reserve(opt.n_samples);
    std::string fixed(closed, '0');
    while (out.bitstrings.size() < opt.n_samples) {
        for (auto &ch : fixed) ch = (rng() >> 63) ? '1' : '0';
        auto amps = provider(fixed);
        if (amps.size() != (size_t{1} << opt.open_count)) throw UsageError("provider returned a wrong batch size");
        out.batches++;
        for (size_t j = 0; j < amps.size() && out.bitstrings.size() < opt.n_samples; j++) {
            double x = big_n * std::norm(amps[j]);
            out.proposals++;
            if (x > opt.ceiling) {
                throw ResourceError("rejection ceiling M = " + text::format_double(opt.ceiling) +
                                    " is below a proposal with N*p = " + text::format_double(x));
            }
            if (rng.uniform01() * opt.ceiling < x) {
                out.bitstrings.push_back(fixed + index_bitstring(j, opt.open_count));
            }
        }
    }
    return out;
}

/// Batches from tensor network contraction with the last `open_count` qubits
/// open.
inline BatchProvider engine_provider(const Circuit &c, int open_count, EngineOptions opt = {},
                                     std::optional<ContractionPlan> plan = std::nullopt) {
    std::vector<int> open;
    for (int q = c.n_qubits - open_count; q < c.n_qubits; q++) open.push_back(q);
    opt.open_cap = std::max<size_t>(opt.open_cap, open.size());
    auto engine = std::make_shared<AmplitudeEngine>(c, open, opt);
    if (plan) engine->set_plan(std::move(*plan));
    return [engine](std::string_view fixed) { return engine->batch(fixed).amplitudes; };
}

/// Batches read from a full state vector.
inline BatchProvider statevector_provider(std::vector<std::complex<double>> state, int n_qubits, int open_count) {
    auto psi = std::make_shared<std::vector<std::complex<double>>>(std::move(state));
    return [psi, n_qubits, open_count](std::string_view fixed) {
        if (fixed.size() != static_cast<size_t>(n_qubits - open_count)) throw UsageError("closed bit count mismatch");
        size_t base = bitstring_index(fixed) << open_count;
        return std::vector<std::complex<double>>(psi->begin() + base, psi->begin() + base + (size_t{1} << open_count));
    };
}

/// Keeps each sample with probability f and replaces it by a uniformly random
/// bitstring otherwise.
inline std::vector<std::string> dilute_to_fidelity(const std::vector<std::string> &samples, double f, int n_qubits,
                                                   uint64_t seed) {
    if (!(f >= 0 && f <= 1)) throw UsageError("fidelity must be in [0, 1]");
    CounterRng rng(seed);
    std::vector<std::string> out;
    out.reserve(samples.size());
    for (const auto &s : samples) {
        if (rng.uniform01() < f) {
            out.push_back(s);
        } else {
            std::string u(n_qubits, '0');
            for (auto &ch : u) ch = (rng() >> 63) ? '1' : '0';
            out.push_back(std::move(u));
        }
    }
    return out;
}

/// Ideal probabilities of `bitstrings`, computing one batch per distinct
/// prefix of closed qubits (the last `open_count` qubits are open).
inline std::vector<double> bitstring_probabilities(const std::vector<std::string> &bitstrings,
                                                   const BatchProvider &provider, int n_qubits, int open_count) {
    std::map<std::string, std::vector<size_t>, std::less<>> groups;
    for (size_t i = 0; i < bitstrings.size(); i++) {
        if (bitstrings[i].size() != static_cast<size_t>(n_qubits)) throw UsageError("bitstring length mismatch");
        groups[bitstrings[i].substr(0, n_qubits - open_count)].push_back(i);
    }
    std::vector<double> p(bitstrings.size());
    for (const auto &[prefix, members] : groups) {
        auto amps = provider(prefix);
        for (size_t i : members) {
            p[i] = std::norm(amps.at(bitstring_index(std::string_view(bitstrings[i]).substr(n_qubits - open_count))));
        }
    }
    return p;
}

struct VerifyResult {
    XebReport report;
    std::vector<double> probabilities;
};

/// XEB report for a list of bitstrings using tensor network amplitudes.
inline VerifyResult verify_bitstrings(const Circuit &c, const std::vector<std::string> &bitstrings, int open_count = 6,
                                      EngineOptions opt = {}, std::optional<ContractionPlan> plan = std::nullopt) {
    open_count = std::min(open_count, c.n_qubits);
    auto provider = engine_provider(c, open_count, std::move(opt), std::move(plan));
    VerifyResult r;
    r.probabilities = bitstring_probabilities(bitstrings, provider, c.n_qubits, open_count);
    r.report = xeb_report(r.probabilities, c.n_qubits);
    return r;
}

// ---------------------------------------------------------------------------
// Oracle comparison table
// ---------------------------------------------------------------------------

struct VerifyRow {
    std::string bitstring;
    std::complex<double> amplitude;
    std::complex<double> reference;

    double relative_error() const {
        double r = std::abs(reference);
        return r > 0 ? std::abs(amplitude - reference) / r : std::abs(amplitude);
    }
};

/// Fixed-width table: bitstring, computed re and im, reference re and im,
/// relative error, then a summary line with the largest relative error.
inline std::string render_verify_table(const std::vector<VerifyRow> &rows) {
    size_t width = std::string_view("bitstring").size();
    for (const auto &r : rows) width = std::max(width, r.bitstring.size());
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-*s  %15s  %15s  %15s  %15s  %14s\n", static_cast<int>(width), "bitstring", "re",
                  "im", "reference_re", "reference_im", "relative_error");
    out += buf;
    double worst = 0;
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %15.8e  %15.8e  %15.8e  %15.8e  %14.3e\n", static_cast<int>(width),
                      r.bitstring.c_str(), r.amplitude.real(), r.amplitude.imag(), r.reference.real(),
                      r.reference.imag(), r.relative_error());
        out += buf;
        worst = std::max(worst, r.relative_error());
    }
    std::snprintf(buf, sizeof(buf), "max relative error %.3e\n", worst);
    out += buf;
    return out;
}

}  // namespace rqc
