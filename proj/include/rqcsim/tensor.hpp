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
#include <atomic>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "rqcsim/error.hpp"
#include "rqcsim/half.hpp"
#include "rqcsim/rng.hpp"

namespace rqc {

/// Identifier of a binary tensor index.
using Label = uint32_t;

using cfloat = std::complex<float>;

// ---------------------------------------------------------------------------
// Storage types
// ---------------------------------------------------------------------------

/// Maps a storage element type onto the type arithmetic is done in.
/// complex<float> and complex<double> compute in themselves; ComplexHalf is
/// the reduced-precision storage of the mixed mode and computes in float.
template <typename T>
struct Storage;

template <>
struct Storage<cfloat> {
    using compute = cfloat;
    using accum = double;
    static constexpr uint32_t code = 0;
    static compute load(cfloat v) {
        return v;
    }
    static cfloat store(compute v) {
        return v;
    }
};

template <>
struct Storage<std::complex<double>> {
    using compute = std::complex<double>;
    using accum = double;
    static constexpr uint32_t code = 1;
    static compute load(std::complex<double> v) {
        return v;
    }
    static std::complex<double> store(compute v) {
        return v;
    }
};

template <>
struct Storage<ComplexHalf> {
    using compute = cfloat;
    using accum = float;
    static constexpr uint32_t code = 2;
    static compute load(ComplexHalf v) {
        return {half_bits_to_float(v.re), half_bits_to_float(v.im)};
    }
    static ComplexHalf store(compute v) {
        return {float_to_half_bits(v.real()), float_to_half_bits(v.imag())};
    }
};

template <typename T>
inline constexpr bool kScaledStorage = std::is_same_v<T, ComplexHalf>;

/// acc += x * y without the NaN-recovery path of operator* on std::complex.
template <typename C>
inline void madd(C &acc, const C &x, const C &y) {
    using R = typename C::value_type;
    R re = acc.real() + x.real() * y.real() - x.imag() * y.imag();
    R im = acc.imag() + x.real() * y.imag() + x.imag() * y.real();
    acc = C(re, im);
}

template <typename C>
inline C cmul(const C &x, const C &y) {
    C out{};
    madd(out, x, y);
    return out;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Allocator whose value-initialization is a no-op. Element types used here
/// are implicit-lifetime (trivially copyable, trivially destructible), so
/// kernels that overwrite every element skip a zeroing pass over memory.
template <typename T>
struct NoInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = NoInitAllocator<U>;
    };
    NoInitAllocator() = default;
    template <typename U>
    NoInitAllocator(const NoInitAllocator<U> &) {
    }
    template <typename U>
    void construct(U *) noexcept {
    }
    template <typename U, typename... Args>
    void construct(U *p, Args &&...args) {
        ::new (static_cast<void *>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using Buffer = std::vector<T, NoInitAllocator<T>>;

/// Dense complex tensor over binary indices.
///
/// Element (i_0, ..., i_{r-1}) lives at flat offset sum_k i_k << (r - 1 - k),
/// i.e. the last label varies fastest. Complex values are interleaved
/// (re, im). For reduced-precision storage the logical value of an element is
/// `scale() * load(stored)`; full-precision tensors always have scale 1.
template <typename T>
class Tensor {
   public:
    using value_type = T;
    using compute_type = typename Storage<T>::compute;

    Tensor() : data_(1, T{}) {
    }

    Tensor(std::vector<Label> labels, Buffer<T> data, double scale = 1.0)
        : labels_(std::move(labels)), data_(std::move(data)), scale_(scale) {
        validate();
    }

    Tensor(std::vector<Label> labels, const std::vector<T> &data, double scale = 1.0)
        : labels_(std::move(labels)), data_(data.begin(), data.end()), scale_(scale) {
        validate();
    }

    Tensor(std::vector<Label> labels, std::initializer_list<T> data, double scale = 1.0)
        : labels_(std::move(labels)), data_(data.begin(), data.end()), scale_(scale) {
        validate();
    }

    /// Tensor whose entries are left unspecified; callers overwrite all of them.
    static Tensor uninitialized(std::vector<Label> labels) {
        if (labels.size() >= 63) {
            throw ResourceError("tensor rank " + std::to_string(labels.size()) + " too large");
        }
        size_t n = size_t{1} << labels.size();
        return Tensor(std::move(labels), Buffer<T>(n));
    }

    static Tensor zeros(std::vector<Label> labels) {
        auto t = uninitialized(std::move(labels));
        std::fill(t.data_.begin(), t.data_.end(), T{});
        return t;
    }

   private:
    void validate() const {
        check_labels();
        if (data_.size() != (size_t{1} << labels_.size())) {
            throw UsageError("tensor data length " + std::to_string(data_.size()) + " does not match rank " +
                             std::to_string(labels_.size()));
        }
    }

   public:
    static Tensor scalar(compute_type v) {
        return Tensor({}, Buffer<T>(1, Storage<T>::store(v)));
    }

    size_t rank() const {
        return labels_.size();
    }
    size_t size() const {
        return data_.size();
    }
    const std::vector<Label> &labels() const {
        return labels_;
    }
    const Buffer<T> &data() const {
        return data_;
    }
    Buffer<T> &data() {
        return data_;
    }
    double scale() const {
        return scale_;
    }
    void set_scale(double s) {
        scale_ = s;
    }

    /// Logical value at a flat offset.
    compute_type value(size_t offset) const {
        compute_type v = Storage<T>::load(data_[offset]);
        if constexpr (kScaledStorage<T>) {
            v *= static_cast<typename compute_type::value_type>(scale_);
        }
        return v;
    }

    bool has_label(Label l) const {
        return std::find(labels_.begin(), labels_.end(), l) != labels_.end();
    }

    /// Position of `l` in labels(), or rank() when absent.
    size_t position(Label l) const {
        return static_cast<size_t>(std::find(labels_.begin(), labels_.end(), l) - labels_.begin());
    }

    /// Bit of the flat offset that carries label position `pos`.
    size_t bit_of_position(size_t pos) const {
        return rank() - 1 - pos;
    }

    void relabel(const std::vector<Label> &labels) {
        if (labels.size() != labels_.size()) {
            throw UsageError("relabel rank mismatch");
        }
        labels_ = labels;
        check_labels();
    }

   private:
    void check_labels() const {
        auto sorted = labels_;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw UsageError("duplicate tensor label");
        }
    }

    std::vector<Label> labels_;
    Buffer<T> data_;
    double scale_ = 1.0;
};

using TensorF = Tensor<cfloat>;
using TensorD = Tensor<std::complex<double>>;
using TensorH = Tensor<ComplexHalf>;

/// Converts between storage types. Reduced-precision targets get a scale equal
/// to the largest component magnitude so stored values lie in [-1, 1].
template <typename To, typename From>
Tensor<To> convert(const Tensor<From> &t) {
    Buffer<To> out(t.size());
    double scale = 1.0;
    if constexpr (kScaledStorage<To>) {
        double biggest = 0;
        for (size_t i = 0; i < t.size(); i++) {
            auto v = t.value(i);
            biggest = std::max({biggest, std::abs(static_cast<double>(v.real())),
                                std::abs(static_cast<double>(v.imag()))});
        }
        scale = biggest > 0 ? biggest : 1.0;
    }
    for (size_t i = 0; i < t.size(); i++) {
        auto v = t.value(i);
        using C = typename Storage<To>::compute;
        using R = typename C::value_type;
        C c(static_cast<R>(v.real() / scale), static_cast<R>(v.imag() / scale));
        out[i] = Storage<To>::store(c);
    }
    return Tensor<To>(t.labels(), std::move(out), scale);
}

/// Tensor with i.i.d. standard normal real and imaginary parts.
template <typename T = cfloat>
Tensor<T> random_tensor(std::vector<Label> labels, CounterRng rng) {
    auto t = Tensor<std::complex<double>>::zeros(std::move(labels));
    for (auto &v : t.data()) {
        double u1 = std::max(rng.uniform01(), 1e-300);
        double u2 = rng.uniform01();
        double r = std::sqrt(-2 * std::log(u1));
        v = {r * std::cos(2 * std::numbers::pi * u2), r * std::sin(2 * std::numbers::pi * u2)};
    }
    return convert<T>(t);
}

// ---------------------------------------------------------------------------
// Instrumentation
// ---------------------------------------------------------------------------

/// Tracks bytes held by kernel-internal buffers.
struct AllocationMeter {
    std::atomic<size_t> current{0};
    std::atomic<size_t> peak{0};

    void add(size_t bytes) {
        size_t now = current.fetch_add(bytes) + bytes;
        size_t p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
    }
    void sub(size_t bytes) {
        current.fetch_sub(bytes);
    }
};

/// Allocator that reports to an AllocationMeter; a null meter disables it.
template <typename T>
struct MeteredAllocator {
    using value_type = T;
    AllocationMeter *meter = nullptr;

    MeteredAllocator() = default;
    explicit MeteredAllocator(AllocationMeter *m) : meter(m) {
    }
    template <typename U>
    MeteredAllocator(const MeteredAllocator<U> &o) : meter(o.meter) {
    }

    T *allocate(size_t n) {
        if (meter) meter->add(n * sizeof(T));
        return std::allocator<T>{}.allocate(n);
    }
    void deallocate(T *p, size_t n) {
        if (meter) meter->sub(n * sizeof(T));
        std::allocator<T>{}.deallocate(p, n);
    }
    template <typename U>
    bool operator==(const MeteredAllocator<U> &o) const {
        return meter == o.meter;
    }
};

template <typename T>
using MeteredVector = std::vector<T, MeteredAllocator<T>>;

/// Counters filled by the contraction kernels.
struct KernelStats {
    /// Complex multiply-adds performed.
    uint64_t madds = 0;
    /// Bytes of the output tensor.
    size_t output_bytes = 0;
    /// Peak bytes of kernel scratch (resident copy of b plus per-worker buffers).
    size_t scratch_peak_bytes = 0;
    /// Number of partitions b was split into (1 when b is fully resident).
    size_t ring_partitions = 1;
};

// ---------------------------------------------------------------------------
// Bit helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Scatters the low bits of `value` onto the set bits of `mask`.
inline uint64_t deposit(uint64_t value, uint64_t mask) {
    uint64_t out = 0;
    for (uint64_t bit = 1; mask; bit <<= 1) {
        uint64_t low = mask & -mask;
        if (value & bit) {
            out |= low;
        }
        mask ^= low;
    }
    return out;
}

/// Next subset of `mask` in increasing numeric order (wraps to 0).
inline uint64_t next_subset(uint64_t sub, uint64_t mask) {
    return (sub - mask) & mask;
}

/// Copies `src` into `dst` where the element at output offset o is read from
/// input offset computed by the per-bit input strides `in_stride[j]` of output
/// bit j. Walks the output in order, updating the input offset by the
/// precomputed delta of the lowest changing bit.
template <typename T>
void strided_gather(const T *src, T *dst, size_t out_rank, const std::vector<uint64_t> &in_stride) {
    std::vector<int64_t> delta(out_rank + 1, 0);
    int64_t below = 0;
    for (size_t t = 0; t < out_rank; t++) {
        delta[t] = static_cast<int64_t>(in_stride[t]) - below;
        below += static_cast<int64_t>(in_stride[t]);
    }
    size_t n = size_t{1} << out_rank;
    int64_t in = 0;
    for (size_t o = 0; o + 1 < n; o++) {
        dst[o] = src[in];
        in += delta[std::countr_zero(o + 1)];
    }
    dst[n - 1] = src[in];
}

inline void check_rank(size_t rank, size_t max_rank) {
    if (rank > max_rank) {
        throw ResourceError("output rank " + std::to_string(rank) + " exceeds maximum " + std::to_string(max_rank) +
                            "; slicing needed");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Permute and slice
// ---------------------------------------------------------------------------

/// Reorders the indices of `t` to `order`, which must be a permutation of its
/// labels.
template <typename T>
Tensor<T> permute(const Tensor<T> &t, const std::vector<Label> &order) {
    if (order.size() != t.rank()) {
        throw UsageError("permutation rank mismatch");
    }
    size_t r = t.rank();
    std::vector<uint64_t> stride(r);
    for (size_t k = 0; k < r; k++) {
        size_t pos = t.position(order[k]);
        if (pos == r) {
            throw UsageError("permutation label " + std::to_string(order[k]) + " not in tensor");
        }
        stride[r - 1 - k] = uint64_t{1} << t.bit_of_position(pos);
    }
    if (order == t.labels()) {
        return t;
    }
    Buffer<T> out(t.size());
    detail::strided_gather(t.data().data(), out.data(), r, stride);
    return Tensor<T>(order, std::move(out), t.scale());
}

/// Fixes `label` to `value`, dropping it from the tensor.
template <typename T>
Tensor<T> slice_tensor(const Tensor<T> &t, Label label, int value) {
    size_t pos = t.position(label);
    if (pos == t.rank()) {
        throw UsageError("slice label " + std::to_string(label) + " not in tensor");
    }
    if (value != 0 && value != 1) {
        throw UsageError("slice value must be 0 or 1");
    }
    std::vector<Label> labels;
    std::vector<uint64_t> stride;
    for (size_t k = 0; k < t.rank(); k++) {
        if (k != pos) {
            labels.push_back(t.labels()[k]);
        }
    }
    size_t out_rank = labels.size();
    stride.resize(out_rank);
    for (size_t k = 0; k < out_rank; k++) {
        stride[out_rank - 1 - k] = uint64_t{1} << t.bit_of_position(t.position(labels[k]));
    }
    size_t base = value ? size_t{1} << t.bit_of_position(pos) : 0;
    Buffer<T> out(size_t{1} << out_rank);
    detail::strided_gather(t.data().data() + base, out.data(), out_rank, stride);
    return Tensor<T>(std::move(labels), std::move(out), t.scale());
}

/// Output labels of a pairwise contraction: labels only in a, then labels only
/// in b, each in source order. `shared` receives the common labels in a's order.
template <typename TA, typename TB>
std::vector<Label> contraction_labels(const Tensor<TA> &a, const Tensor<TB> &b, std::vector<Label> *shared = nullptr) {
    std::vector<Label> out;
    for (Label l : a.labels()) {
        if (b.has_label(l)) {
            if (shared) shared->push_back(l);
        } else {
            out.push_back(l);
        }
    }
    for (Label l : b.labels()) {
        if (!a.has_label(l)) {
            out.push_back(l);
        }
    }
    return out;
}

namespace detail {

/// Upper bound on |C| entries, used as the storage scale of a reduced
/// precision output: max|a| times the largest column l1 norm of b.
template <typename C>
double output_scale_bound(double a_max, const C *b_rows, size_t k, size_t q) {
    double best = 0;
    for (size_t j = 0; j < q; j++) {
        double col = 0;
        for (size_t s = 0; s < k; s++) {
            col += std::abs(std::complex<double>(b_rows[s * q + j]));
        }
        best = std::max(best, col);
    }
    double bound = a_max * best * std::sqrt(2.0);
    return bound > 0 ? bound : 1.0;
}

template <typename T>
double max_abs(const Tensor<T> &t) {
    double best = 0;
    for (size_t i = 0; i < t.size(); i++) {
        best = std::max(best, std::abs(std::complex<double>(t.value(i))));
    }
    return best;
}

}  // namespace detail

namespace detail {

/// Row-major matrix in split real/imaginary layout.
template <typename R>
struct SplitMatrix {
    MeteredVector<R> re;
    MeteredVector<R> im;
    size_t cols = 0;

    explicit SplitMatrix(MeteredAllocator<R> alloc = {}) : re(alloc), im(alloc) {
    }
};

template <typename R, size_t N>
inline void row_update_fixed(R *__restrict acc_re, R *__restrict acc_im, R cr, R ci, const R *__restrict b_re,
                             const R *__restrict b_im) {
    for (size_t c = 0; c < N; c++) {
        acc_re[c] += cr * b_re[c] - ci * b_im[c];
        acc_im[c] += cr * b_im[c] + ci * b_re[c];
    }
}

/// acc[c] += coef * b[c] for c < cols, split layout. Narrow rows dispatch to
/// fully unrolled bodies; the arithmetic is the same either way.
template <typename R>
inline void row_update(R *__restrict acc_re, R *__restrict acc_im, R cr, R ci, const R *__restrict b_re,
                       const R *__restrict b_im, size_t cols) {
    switch (cols) {
        case 1: return row_update_fixed<R, 1>(acc_re, acc_im, cr, ci, b_re, b_im);
        case 2: return row_update_fixed<R, 2>(acc_re, acc_im, cr, ci, b_re, b_im);
        case 4: return row_update_fixed<R, 4>(acc_re, acc_im, cr, ci, b_re, b_im);
        case 8: return row_update_fixed<R, 8>(acc_re, acc_im, cr, ci, b_re, b_im);
        case 16: return row_update_fixed<R, 16>(acc_re, acc_im, cr, ci, b_re, b_im);
        default: break;
    }
    for (size_t c = 0; c < cols; c++) {
        acc_re[c] += cr * b_re[c] - ci * b_im[c];
        acc_im[c] += cr * b_im[c] + ci * b_re[c];
    }
}

/// Writes a finished split row into interleaved storage, dividing by `scale`
/// for reduced-precision outputs.
template <typename T, typename R>
inline void store_row(T *dst, const R *acc_re, const R *acc_im, size_t cols, R inv_scale) {
    for (size_t c = 0; c < cols; c++) {
        typename Storage<T>::compute v(acc_re[c], acc_im[c]);
        if constexpr (kScaledStorage<T>) {
            v *= inv_scale;
        }
        dst[c] = Storage<T>::store(v);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Contraction: permute-then-matmul baseline
// ---------------------------------------------------------------------------

/// Contracts all shared labels of `a` and `b` by permuting a into
/// (a-only, shared) and b into (shared, b-only) and multiplying the matrices.
template <typename T>
Tensor<T> contract_naive(const Tensor<T> &a, const Tensor<T> &b, size_t max_rank = 40, KernelStats *stats = nullptr) {
    using C = typename Storage<T>::compute;
    using R = typename Storage<T>::accum;
    std::vector<Label> shared;
    auto out_labels = contraction_labels(a, b, &shared);
    detail::check_rank(out_labels.size(), max_rank);

    std::vector<Label> a_order, b_order;
    for (Label l : a.labels()) {
        if (!b.has_label(l)) a_order.push_back(l);
    }
    a_order.insert(a_order.end(), shared.begin(), shared.end());
    b_order = shared;
    for (Label l : b.labels()) {
        if (!a.has_label(l)) b_order.push_back(l);
    }
    auto ap = permute(a, a_order);
    auto bp = permute(b, b_order);

    const size_t k = size_t{1} << shared.size();
    const size_t p = ap.size() / k;
    const size_t q = bp.size() / k;

    detail::SplitMatrix<R> bm;
    bm.cols = q;
    bm.re.resize(bp.size());
    bm.im.resize(bp.size());
    std::vector<C> b_full(bp.size());
    for (size_t i = 0; i < bp.size(); i++) {
        b_full[i] = bp.value(i);
        bm.re[i] = b_full[i].real();
        bm.im[i] = b_full[i].imag();
    }

    auto out = Tensor<T>::uninitialized(out_labels);
    double out_scale = 1.0;
    if constexpr (kScaledStorage<T>) {
        out_scale = detail::output_scale_bound(detail::max_abs(a), b_full.data(), k, q);
        out.set_scale(out_scale);
    }
    const R inv_scale = static_cast<R>(1.0 / out_scale);
    std::vector<R> acc_re(q), acc_im(q);
    for (size_t i = 0; i < p; i++) {
        std::fill(acc_re.begin(), acc_re.end(), R{});
        std::fill(acc_im.begin(), acc_im.end(), R{});
        for (size_t s = 0; s < k; s++) {
            C coef = ap.value(i * k + s);
            detail::row_update<R>(acc_re.data(), acc_im.data(), coef.real(), coef.imag(), bm.re.data() + s * q,
                               bm.im.data() + s * q, q);
        }
        detail::store_row<T>(out.data().data() + i * q, acc_re.data(), acc_im.data(), q, inv_scale);
    }
    if (stats) {
        stats->madds += static_cast<uint64_t>(p) * k * q;
        stats->output_bytes = out.size() * sizeof(T);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Contraction: fused permute-multiply kernel
// ---------------------------------------------------------------------------

struct FusedOptions {
    /// Elements of `a` fetched per contiguous batch, log2.
    unsigned batch_log2 = 13;
    /// Threads splitting the output rows.
    unsigned workers = 1;
    /// Elements of b that may be held resident per worker; larger b is split
    /// into column partitions visited in ring order.
    size_t resident_budget = size_t{1} << 15;
    /// Reject outputs above this rank.
    size_t max_rank = 40;
    KernelStats *stats = nullptr;
    AllocationMeter *meter = nullptr;
};

/// Contracts `a` with `b` reading `a` once in contiguous batches and without
/// materializing a permuted copy of it.
///
/// The flat offset of `a` splits into an outer part (leading labels) and the
/// trailing `batch_log2` bits. Each outer assignment of the a-only labels is a
/// work unit owning a contiguous block of output rows. Within a unit, the
/// outer assignments of shared labels select batches of `a`; inside a batch
/// each (free, shared) element scales one row of the resident b into a
/// worker-local row accumulator, which is stored once when complete. Every
/// output element is written by exactly one worker and accumulated over the
/// shared index in increasing order.
///
/// When b exceeds `resident_budget` elements (or its rows are wider than a
/// batch) its columns are split into partitions; worker w visits partition
/// (w + j) mod P in round j, so partitions rotate among workers.
template <typename T>
Tensor<T> contract_fused(const Tensor<T> &a, const Tensor<T> &b, const FusedOptions &opt = {}) {
    using C = typename Storage<T>::compute;
    using R = typename Storage<T>::accum;

    std::vector<Label> shared;
    auto out_labels = contraction_labels(a, b, &shared);
    detail::check_rank(out_labels.size(), opt.max_rank);

    const size_t ra = a.rank();
    const unsigned bb = static_cast<unsigned>(std::min<size_t>(opt.batch_log2, ra));
    uint64_t free_inner = 0, shared_inner = 0, free_outer = 0, shared_outer = 0;
    for (size_t pos = 0; pos < ra; pos++) {
        uint64_t bit = uint64_t{1} << a.bit_of_position(pos);
        bool is_shared = b.has_label(a.labels()[pos]);
        bool inner = a.bit_of_position(pos) < bb;
        (is_shared ? (inner ? shared_inner : shared_outer) : (inner ? free_inner : free_outer)) |= bit;
    }
    const unsigned n_free_inner = std::popcount(free_inner);
    const unsigned n_free_outer = std::popcount(free_outer);
    const unsigned n_shared_inner = std::popcount(shared_inner);
    const size_t n_shared_outer_cfg = size_t{1} << std::popcount(shared_outer);

    std::vector<Label> b_order = shared;
    for (Label l : b.labels()) {
        if (!a.has_label(l)) b_order.push_back(l);
    }
    const size_t k = size_t{1} << shared.size();
    const size_t q = b.size() / k;

    size_t parts = 1;
    if (opt.resident_budget > 0 && b.size() > opt.resident_budget) {
        parts = (b.size() + opt.resident_budget - 1) / opt.resident_budget;
    }
    parts = std::min(q, std::max(parts, (q + (size_t{1} << bb) - 1) >> bb));
    const size_t part_cols = (q + parts - 1) / parts;
    parts = (q + part_cols - 1) / part_cols;

    MeteredAllocator<R> alloc(opt.meter);
    std::vector<detail::SplitMatrix<R>> b_parts;
    double out_scale = 1.0;
    {
        auto bp = permute(b, b_order);
        for (size_t part = 0; part < parts; part++) {
            size_t c0 = part * part_cols;
            size_t c1 = std::min(q, c0 + part_cols);
            detail::SplitMatrix<R> m(alloc);
            m.cols = c1 - c0;
            m.re.resize(k * m.cols);
            m.im.resize(k * m.cols);
            for (size_t s = 0; s < k; s++) {
                for (size_t j = c0; j < c1; j++) {
                    C v = bp.value(s * q + j);
                    m.re[s * m.cols + (j - c0)] = v.real();
                    m.im[s * m.cols + (j - c0)] = v.imag();
                }
            }
            b_parts.push_back(std::move(m));
        }
        if constexpr (kScaledStorage<T>) {
            std::vector<C> full(k * q);
            for (size_t i = 0; i < full.size(); i++) full[i] = bp.value(i);
            out_scale = detail::output_scale_bound(detail::max_abs(a), full.data(), k, q);
        }
    }

    auto out = Tensor<T>::uninitialized(out_labels);
    out.set_scale(out_scale);
    const size_t rows_per_unit = size_t{1} << n_free_inner;
    const size_t units = size_t{1} << n_free_outer;
    const T *adata = a.data().data();
    const R a_scale = static_cast<R>(a.scale());
    const R inv_out_scale = static_cast<R>(1.0 / out_scale);

    auto run = [&](size_t worker, size_t unit_begin, size_t unit_end, uint64_t &madds) {
        if (unit_begin >= unit_end) return;
        MeteredVector<R> acc_re(part_cols, R{}, alloc);
        MeteredVector<R> acc_im(part_cols, R{}, alloc);
        uint64_t unit_bits = detail::deposit(unit_begin, free_outer);
        for (size_t u = unit_begin; u < unit_end; u++, unit_bits = detail::next_subset(unit_bits, free_outer)) {
            for (size_t j = 0; j < parts; j++) {
                const auto &bm = b_parts[(worker + j) % parts];
                const size_t c0 = ((worker + j) % parts) * part_cols;
                const size_t cols = bm.cols;
                T *const unit_out = out.data().data() + u * rows_per_unit * q + c0;
                auto narrow = [&]<size_t N>(std::integral_constant<size_t, N>) {
                    // Accumulators held in registers for rows of N columns.
                    uint64_t e_r = 0;
                    size_t r = 0;
                    do {
                        R lre[N] = {}, lim[N] = {};
                        uint64_t so_bits = 0;
                        const R *b_re = bm.re.data();
                        const R *b_im = bm.im.data();
                        do {
                            const T *batch = adata + (unit_bits | so_bits) + e_r;
                            uint64_t e_s = 0;
                            do {
                                C coef = Storage<T>::load(batch[e_s]);
                                if constexpr (kScaledStorage<T>) coef *= a_scale;
                                detail::row_update_fixed<R, N>(lre, lim, coef.real(), coef.imag(), b_re, b_im);
                                b_re += N;
                                b_im += N;
                                e_s = detail::next_subset(e_s, shared_inner);
                            } while (e_s != 0);
                            so_bits = detail::next_subset(so_bits, shared_outer);
                        } while (so_bits != 0);
                        detail::store_row<T>(unit_out + r * q, lre, lim, N, inv_out_scale);
                        r++;
                        e_r = detail::next_subset(e_r, free_inner);
                    } while (e_r != 0);
                };
                if (cols == 1) {
                    narrow(std::integral_constant<size_t, 1>{});
                } else if (cols == 2) {
                    narrow(std::integral_constant<size_t, 2>{});
                } else if (cols == 4) {
                    narrow(std::integral_constant<size_t, 4>{});
                } else if (cols == 8) {
                    narrow(std::integral_constant<size_t, 8>{});
                } else {
                    uint64_t e_r = 0;
                    size_t r = 0;
                    do {
                        std::fill(acc_re.begin(), acc_re.begin() + cols, R{});
                        std::fill(acc_im.begin(), acc_im.begin() + cols, R{});
                        uint64_t so_bits = 0;
                        size_t s_row = 0;
                        do {
                            const T *batch = adata + (unit_bits | so_bits) + e_r;
                            uint64_t e_s = 0;
                            do {
                                C coef = Storage<T>::load(batch[e_s]);
                                if constexpr (kScaledStorage<T>) coef *= a_scale;
                                detail::row_update<R>(acc_re.data(), acc_im.data(), coef.real(), coef.imag(),
                                                      bm.re.data() + s_row * cols, bm.im.data() + s_row * cols, cols);
                                s_row++;
                                e_s = detail::next_subset(e_s, shared_inner);
                            } while (e_s != 0);
                            so_bits = detail::next_subset(so_bits, shared_outer);
                        } while (so_bits != 0);
                        detail::store_row<T>(unit_out + r * q, acc_re.data(), acc_im.data(), cols, inv_out_scale);
                        r++;
                        e_r = detail::next_subset(e_r, free_inner);
                    } while (e_r != 0);
                }
                madds += static_cast<uint64_t>(rows_per_unit) * n_shared_outer_cfg * (size_t{1} << n_shared_inner) *
                         cols;
            }
        }
    };

    unsigned workers = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(units)));
    std::vector<uint64_t> madds(workers, 0);
    if (workers == 1) {
        run(0, 0, units, madds[0]);
    } else {
        std::vector<std::thread> pool;
        size_t chunk = (units + workers - 1) / workers;
        for (unsigned w = 0; w < workers; w++) {
            pool.emplace_back(
                [&, w] { run(w, std::min(units, w * chunk), std::min(units, (w + 1) * chunk), madds[w]); });
        }
        for (auto &t : pool) t.join();
    }
    if (opt.stats) {
        for (auto m : madds) opt.stats->madds += m;
        opt.stats->output_bytes = out.size() * sizeof(T);
        if (opt.meter) opt.stats->scratch_peak_bytes = std::max(opt.stats->scratch_peak_bytes, opt.meter->peak.load());
        opt.stats->ring_partitions = parts;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison helpers
// ---------------------------------------------------------------------------

/// ||a - b||_F / ||b||_F after aligning b's labels to a's order.
template <typename TA, typename TB>
double relative_error(const Tensor<TA> &a, const Tensor<TB> &b) {
    auto bb = permute(b, a.labels());
    double num = 0, den = 0;
    for (size_t i = 0; i < a.size(); i++) {
        std::complex<double> x(a.value(i)), y(bb.value(i));
        num += std::norm(x - y);
        den += std::norm(y);
    }
    if (den == 0) return std::sqrt(num);
    return std::sqrt(num / den);
}

/// Elementwise sum of two tensors with equal label order.
template <typename T>
void add_into(Tensor<T> &acc, const Tensor<T> &x) {
    if (acc.labels() != x.labels()) {
        throw UsageError("add_into label mismatch");
    }
    if constexpr (kScaledStorage<T>) {
        auto sum = Tensor<cfloat>::zeros(acc.labels());
        for (size_t i = 0; i < acc.size(); i++) sum.data()[i] = acc.value(i) + x.value(i);
        acc = convert<T>(sum);
    } else {
        for (size_t i = 0; i < acc.size(); i++) acc.data()[i] += x.data()[i];
    }
}

// ---------------------------------------------------------------------------
// Binary dump
// ---------------------------------------------------------------------------
//
// Layout, all little-endian:
//   char[4]  "RQCT"
//   u32      version (1)
//   u32      storage code (0 complex<float>, 1 complex<double>, 2 binary16 pair)
//   u32      rank r
//   u32[r]   labels
//   f64      scale
//   then 2^r complex values as interleaved (re, im) of the storage width.

namespace detail {

template <typename U>
void write_le(std::ostream &os, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    os.write(reinterpret_cast<const char *>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream &is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char *>(buf), sizeof(U))) {
        throw FormatError("truncated binary stream");
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
}

template <typename T>
void write_element(std::ostream &os, const T &v) {
    if constexpr (std::is_same_v<T, ComplexHalf>) {
        write_le(os, v.re);
        write_le(os, v.im);
    } else {
        write_le(os, v.real());
        write_le(os, v.imag());
    }
}

template <typename T>
T read_element(std::istream &is) {
    if constexpr (std::is_same_v<T, ComplexHalf>) {
        ComplexHalf h;
        h.re = read_le<uint16_t>(is);
        h.im = read_le<uint16_t>(is);
        return h;
    } else {
        using R = typename T::value_type;
        R re = read_le<R>(is);
        R im = read_le<R>(is);
        return T(re, im);
    }
}

}  // namespace detail

template <typename T>
void dump_tensor(std::ostream &os, const Tensor<T> &t) {
    os.write("RQCT", 4);
    detail::write_le<uint32_t>(os, 1);
    detail::write_le<uint32_t>(os, Storage<T>::code);
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (Label l : t.labels()) detail::write_le<uint32_t>(os, l);
    detail::write_le<double>(os, t.scale());
    for (const auto &v : t.data()) detail::write_element(os, v);
}

template <typename T>
Tensor<T> load_tensor(std::istream &is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RQCT", 4) != 0) {
        throw FormatError("not a tensor dump");
    }
    if (detail::read_le<uint32_t>(is) != 1) throw FormatError("unsupported tensor dump version");
    if (detail::read_le<uint32_t>(is) != Storage<T>::code) throw FormatError("tensor dump storage type mismatch");
    uint32_t rank = detail::read_le<uint32_t>(is);
    if (rank > 40) throw FormatError("tensor dump rank too large");
    std::vector<Label> labels(rank);
    for (auto &l : labels) l = detail::read_le<uint32_t>(is);
    double scale = detail::read_le<double>(is);
    Buffer<T> data(size_t{1} << rank);
    for (auto &v : data) v = detail::read_element<T>(is);
    return Tensor<T>(std::move(labels), std::move(data), scale);
}

}  // namespace rqc
