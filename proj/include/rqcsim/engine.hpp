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

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <new>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rqcsim/circuit.hpp"
#include "rqcsim/error.hpp"
#include "rqcsim/network.hpp"
#include "rqcsim/order.hpp"
#include "rqcsim/tensor.hpp"

namespace rqc {

enum class Precision { single, mixed };

inline std::string_view precision_name(Precision p) {
    return p == Precision::single ? "single" : "mixed";
}

inline Precision precision_from(std::string_view s) {
    if (s == "single") return Precision::single;
    if (s == "mixed") return Precision::mixed;
    throw UsageError("unknown precision '" + std::string(s) + "' (single or mixed)");
}

struct ExecOptions {
    unsigned workers = 1;
    unsigned batch_log2 = 13;
    Precision precision = Precision::single;
    /// Partial sums are persisted here after every finished chunk when set.
    std::string checkpoint_path;
    /// Receives one progress line per finished chunk when set.
    std::ostream *progress = nullptr;
    /// Refuse plans whose working set estimate exceeds this (0: no limit).
    size_t memory_limit_bytes = 0;
};

struct Telemetry {
    uint64_t madds = 0;
    /// 8 * madds, comparable with the cost model.
    double flops = 0;
    double seconds = 0;
    uint64_t slices = 0;
    uint64_t chunks_resumed = 0;
};

/// Slices are summed in chunks of consecutive indices; the chunk count is
/// fixed so the reduction tree does not depend on the worker count.
inline constexpr uint64_t kMaxChunks = 64;

namespace detail {

inline uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Sums values pushed in index order along a complete binary tree: entries
/// 2i and 2i+1 are added first, then pairs of pairs, and so on.
template <typename T>
class PairwiseSum {
   public:
    void push(Tensor<T> t) {
        size_t level = 0;
        while (!stack_.empty() && stack_.back().second == level) {
            Tensor<T> left = std::move(stack_.back().first);
            stack_.pop_back();
            add_into(left, t);
            t = std::move(left);
            level++;
        }
        stack_.push_back({std::move(t), level});
    }

    /// Result once a power-of-two count has been pushed.
    Tensor<T> take() {
        if (stack_.size() != 1) throw UsageError("pairwise sum needs a power-of-two count");
        auto t = std::move(stack_.back().first);
        stack_.clear();
        return t;
    }

   private:
    std::vector<std::pair<Tensor<T>, size_t>> stack_;
};

template <typename T>
class Executor {
   public:
    Executor(const TensorNetwork &net, const ContractionPlan &plan, const ExecOptions &opt)
        : net_(net), plan_(plan), opt_(opt) {
        if (!net.has_data()) throw UsageError("network has no tensor data");
        detail::check_tree(net, plan.tree);
        for (const auto &[id, n] : net.nodes()) leaves_.emplace(id, convert<T>(*n.data));
        std::ostringstream fp;
        fp << serialize_plan(net, plan) << precision_name(opt.precision);
        for (Label l : net.open_labels()) fp << ' ' << l;
        for (const auto &[id, t] : leaves_) dump_tensor(fp, t);
        fingerprint_ = fnv1a(fp.str());
    }

    /// Contracts the tree with sliced label i fixed to bit (k - 1 - i) of
    /// `slice`, so the first sliced label is the most significant.
    Tensor<T> contract_slice(uint64_t slice, KernelStats &stats) const {
        const auto &sliced = plan_.slices.sliced;
        if (slice >= plan_.slices.n_slices()) throw UsageError("slice index out of range");
        const size_t k = sliced.size();
        FusedOptions fo;
        fo.batch_log2 = opt_.batch_log2;
        fo.max_rank = 62;
        fo.stats = &stats;
        std::vector<Tensor<T>> stack;
        for (int v : plan_.tree.postorder()) {
            const auto &node = plan_.tree.nodes[v];
            if (plan_.tree.is_leaf(v)) {
                Tensor<T> t = leaves_.at(node.leaf);
                for (size_t i = 0; i < k; i++) {
                    if (t.has_label(sliced[i])) t = slice_tensor(t, sliced[i], static_cast<int>((slice >> (k - 1 - i)) & 1));
                }
                stack.push_back(std::move(t));
                continue;
            }
            Tensor<T> r = std::move(stack.back());
            stack.pop_back();
            Tensor<T> l = std::move(stack.back());
            stack.pop_back();
            try {
                stack.push_back(l.size() >= r.size() ? contract_fused(l, r, fo) : contract_fused(r, l, fo));
            } catch (const std::bad_alloc &) {
                auto labels = merged_labels(l.labels(), r.labels());
                throw ResourceError("out of memory allocating an intermediate of 2^" + std::to_string(labels.size()) +
                                    " entries; choose a smaller max size");
            }
        }
        return permute(stack.back(), net_.open_labels());
    }

    Tensor<T> run(Telemetry &tel) {
        const uint64_t n = plan_.slices.n_slices();
        const uint64_t chunks = std::min(n, kMaxChunks);
        const uint64_t per_chunk = n / chunks;
        check_memory();

        std::vector<std::optional<Tensor<T>>> done(chunks);
        load_checkpoint(done, tel);
        std::mutex mu;
        std::atomic<uint64_t> next{0};
        std::atomic<uint64_t> finished{tel.chunks_resumed};
        std::vector<KernelStats> stats(std::max(1u, opt_.workers));
        std::exception_ptr failure;
        auto start = std::chrono::steady_clock::now();

        auto work = [&](unsigned w) {
            try {
                while (true) {
                    uint64_t c = next++;
                    if (c >= chunks) return;
                    if (done[c]) continue;
                    PairwiseSum<T> sum;
                    for (uint64_t s = c * per_chunk; s < (c + 1) * per_chunk; s++) {
                        sum.push(contract_slice(s, stats[w]));
                    }
                    auto t = sum.take();
                    std::lock_guard lock(mu);
                    done[c] = std::move(t);
                    uint64_t f = ++finished;
                    if (!opt_.checkpoint_path.empty()) save_checkpoint(done);
                    if (opt_.progress) report(f, chunks, per_chunk, stats, start);
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                next = chunks;
            }
        };
        unsigned workers = std::max(1u, opt_.workers);
        if (workers == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned w = 0; w < workers; w++) pool.emplace_back(work, w);
            for (auto &t : pool) t.join();
        }
        if (failure) std::rethrow_exception(failure);

        PairwiseSum<T> total;
        for (auto &t : done) total.push(std::move(*t));
        for (const auto &s : stats) tel.madds += s.madds;
        tel.flops = 8.0 * static_cast<double>(tel.madds);
        tel.slices = n - tel.chunks_resumed * per_chunk;
        tel.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return total.take();
    }

   private:
    void check_memory() const {
        if (opt_.memory_limit_bytes == 0) return;
        auto c = cost(net_, plan_.tree, plan_.slices);
        // Two operands and a result per worker at the largest intermediate.
        double need = std::ldexp(3.0 * sizeof(T), c.max_intermediate_log2) * std::max(1u, opt_.workers);
        if (need > static_cast<double>(opt_.memory_limit_bytes)) {
            throw ResourceError("plan needs about " + std::to_string(static_cast<uint64_t>(need)) +
                                " bytes for intermediates of 2^" + std::to_string(c.max_intermediate_log2) +
                                " entries; limit is " + std::to_string(opt_.memory_limit_bytes) +
                                "; choose a smaller max size");
        }
    }

    void report(uint64_t finished, uint64_t chunks, uint64_t per_chunk, const std::vector<KernelStats> &stats,
                std::chrono::steady_clock::time_point start) const {
        uint64_t madds = 0;
        for (const auto &s : stats) madds += s.madds;
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char line[160];
        std::snprintf(line, sizeof(line), "slices %llu/%llu  %.3f s  %.3g flop/s\n",
                      static_cast<unsigned long long>(finished * per_chunk),
                      static_cast<unsigned long long>(chunks * per_chunk), secs,
                      secs > 0 ? 8.0 * static_cast<double>(madds) / secs : 0.0);
        *opt_.progress << line << std::flush;
    }

    // Checkpoint layout, little-endian:
    //   char[4] "RQCC", u32 version (1), u64 fingerprint of plan and leaves,
    //   u32 chunk count, u32 finished count,
    //   then per finished chunk: u32 chunk index and its partial sum as a
    //   tensor dump.
    void save_checkpoint(const std::vector<std::optional<Tensor<T>>> &done) const {
        std::string tmp = opt_.checkpoint_path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) throw ResourceError("cannot write checkpoint " + tmp);
            os.write("RQCC", 4);
            write_le<uint32_t>(os, 1);
            write_le<uint64_t>(os, fingerprint_);
            write_le<uint32_t>(os, static_cast<uint32_t>(done.size()));
            uint32_t count = 0;
            for (const auto &d : done) count += d.has_value();
            write_le<uint32_t>(os, count);
            for (size_t c = 0; c < done.size(); c++) {
                if (!done[c]) continue;
                write_le<uint32_t>(os, static_cast<uint32_t>(c));
                dump_tensor(os, *done[c]);
            }
            if (!os) throw ResourceError("failed writing checkpoint " + tmp);
        }
        std::filesystem::rename(tmp, opt_.checkpoint_path);
    }

    void load_checkpoint(std::vector<std::optional<Tensor<T>>> &done, Telemetry &tel) const {
        if (opt_.checkpoint_path.empty() || !std::filesystem::exists(opt_.checkpoint_path)) return;
        std::ifstream is(opt_.checkpoint_path, std::ios::binary);
        char magic[4];
        if (!is.read(magic, 4) || std::memcmp(magic, "RQCC", 4) != 0) throw FormatError("not a checkpoint file");
        if (read_le<uint32_t>(is) != 1) throw FormatError("unsupported checkpoint version");
        if (read_le<uint64_t>(is) != fingerprint_) throw FormatError("checkpoint belongs to a different plan or input");
        if (read_le<uint32_t>(is) != done.size()) throw FormatError("checkpoint chunk count mismatch");
        uint32_t count = read_le<uint32_t>(is);
        for (uint32_t i = 0; i < count; i++) {
            uint32_t c = read_le<uint32_t>(is);
            if (c >= done.size() || done[c]) throw FormatError("bad checkpoint chunk index");
            done[c] = load_tensor<T>(is);
            tel.chunks_resumed++;
        }
    }

    const TensorNetwork &net_;
    const ContractionPlan &plan_;
    ExecOptions opt_;
    std::map<size_t, Tensor<T>> leaves_;
    uint64_t fingerprint_ = 0;
};

}  // namespace detail

/// One slice of the plan as a single-precision tensor over the open labels.
inline TensorF contract_slice(const TensorNetwork &net, const ContractionPlan &plan, uint64_t slice_index,
                              const ExecOptions &opt = {}, KernelStats *stats = nullptr) {
    KernelStats local;
    KernelStats &s = stats ? *stats : local;
    if (opt.precision == Precision::mixed) {
        return convert<cfloat>(detail::Executor<ComplexHalf>(net, plan, opt).contract_slice(slice_index, s));
    }
    return detail::Executor<cfloat>(net, plan, opt).contract_slice(slice_index, s);
}

/// Sum over all slices, labels in open_labels() order. The reduction runs in a
/// fixed binary tree over slice indices, so the result is bit-identical for
/// any worker count.
inline TensorF execute(const TensorNetwork &net, const ContractionPlan &plan, const ExecOptions &opt = {},
                       Telemetry *telemetry = nullptr) {
    Telemetry local;
    Telemetry &tel = telemetry ? *telemetry : local;
    if (opt.precision == Precision::mixed) {
        return convert<cfloat>(detail::Executor<ComplexHalf>(net, plan, opt).run(tel));
    }
    return detail::Executor<cfloat>(net, plan, opt).run(tel);
}

// ---------------------------------------------------------------------------
// Amplitudes
// ---------------------------------------------------------------------------

/// Amplitudes for every assignment of the open qubits with the closed qubits
/// fixed. Entry j sets open qubit open_qubits[i] to bit (k - 1 - i) of j.
struct AmplitudeBatch {
    std::string fixed_bits;
    std::vector<int> open_qubits;
    std::vector<std::complex<double>> amplitudes;

    /// Full bitstring (character q is qubit q) of entry j.
    std::string bitstring(size_t j, int n_qubits) const {
        std::string s(n_qubits, '0');
        std::vector<bool> open(n_qubits, false);
        const size_t k = open_qubits.size();
        for (size_t i = 0; i < k; i++) {
            open[open_qubits[i]] = true;
            s[open_qubits[i]] = ((j >> (k - 1 - i)) & 1) ? '1' : '0';
        }
        size_t b = 0;
        for (int q = 0; q < n_qubits; q++) {
            if (!open[q]) s[q] = fixed_bits[b++];
        }
        return s;
    }
};

struct EngineOptions {
    OrderOptions order;
    ExecOptions exec;
    /// Largest number of open qubits per batch.
    size_t open_cap = 6;
};

/// Computes amplitude batches of one circuit for a fixed set of open qubits.
/// The contraction plan depends only on the network structure, so it is
/// found once and reused for every choice of closed bits.
class AmplitudeEngine {
   public:
    AmplitudeEngine(Circuit circuit, std::vector<int> open_qubits, EngineOptions opt = {})
        : circuit_(std::move(circuit)), open_(std::move(open_qubits)), opt_(std::move(opt)) {
        if (open_.size() > opt_.open_cap) {
            throw UsageError(std::to_string(open_.size()) + " open qubits exceed the cap of " +
                             std::to_string(opt_.open_cap));
        }
        std::string zeros(circuit_.n_qubits - open_.size(), '0');
        structure_ = simplify(circuit_to_network(circuit_, zeros, open_, false));
    }

    const TensorNetwork &structure() const {
        return structure_;
    }
    const std::vector<int> &open_qubits() const {
        return open_;
    }

    const ContractionPlan &plan() {
        if (!plan_) plan_ = find_order(structure_, opt_.order);
        return *plan_;
    }
    void set_plan(ContractionPlan p) {
        detail::check_tree(structure_, p.tree);
        plan_ = std::move(p);
    }

    AmplitudeBatch batch(std::string_view fixed_bits, Telemetry *telemetry = nullptr) {
        auto net = simplify(circuit_to_network(circuit_, fixed_bits, open_, true));
        auto t = execute(net, plan(), opt_.exec, telemetry);
        AmplitudeBatch out{std::string(fixed_bits), open_, {}};
        out.amplitudes.reserve(t.size());
        for (size_t i = 0; i < t.size(); i++) out.amplitudes.emplace_back(t.value(i));
        return out;
    }

    std::complex<double> amplitude(std::string_view bitstring) {
        if (!open_.empty()) throw UsageError("single amplitudes need an engine without open qubits");
        return batch(bitstring).amplitudes.at(0);
    }

   private:
    Circuit circuit_;
    std::vector<int> open_;
    EngineOptions opt_;
    TensorNetwork structure_;
    std::optional<ContractionPlan> plan_;
};

/// The open-leg tensor of one contraction pass is the whole batch.
inline AmplitudeBatch amplitudes_batch(const Circuit &c, std::string_view fixed_bits,
                                       const std::vector<int> &open_qubits, int max_size_log2, uint64_t seed,
                                       EngineOptions opt = {}) {
    opt.order.max_size_log2 = max_size_log2;
    opt.order.seed = seed;
    AmplitudeEngine engine(c, open_qubits, opt);
    return engine.batch(fixed_bits);
}

// ---------------------------------------------------------------------------
// Amplitude records
// ---------------------------------------------------------------------------
//
// JSON lines, one object per bitstring:
//   {"bitstring":"0110","re":0.0123,"im":-0.0045}

struct AmplitudeRecord {
    std::string bitstring;
    std::complex<double> amplitude;
    bool operator==(const AmplitudeRecord &) const = default;
};

inline std::string serialize_amplitudes(const std::vector<AmplitudeRecord> &records) {
    std::string out;
    for (const auto &r : records) {
        nlohmann::ordered_json j;
        j["bitstring"] = r.bitstring;
        j["re"] = r.amplitude.real();
        j["im"] = r.amplitude.imag();
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<AmplitudeRecord> parse_amplitudes(std::string_view text) {
    std::vector<AmplitudeRecord> out;
    text::LineReader reader(text);
    std::string_view line;
    while (reader.next(line)) {
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            AmplitudeRecord r;
            r.bitstring = j.at("bitstring").get<std::string>();
            if (r.bitstring.find_first_not_of("01") != std::string::npos) {
                throw FormatError("bitstring must contain only 0 and 1", reader.line_no());
            }
            r.amplitude = {j.at("re").get<double>(), j.at("im").get<double>()};
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception &e) {
            throw FormatError(std::string("bad amplitude record: ") + e.what(), reader.line_no());
        }
    }
    return out;
}

}  // namespace rqc
