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

#include <cstdint>
#include <limits>

namespace rqc {

/// Counter-based pseudo random generator.
///
/// Output i of a stream with key k is splitmix64(k + (i + 1) * golden), where
/// splitmix64 is the finalizer of Steele, Lea and Flood's SplitMix64. The value
/// depends only on (key, i), so results are reproducible across platforms and
/// independent of the order in which streams are consumed. Child streams are
/// derived with `split`, which hashes the parent key together with a tag.
class CounterRng {
   public:
    using result_type = uint64_t;

    static constexpr uint64_t golden = 0x9E3779B97F4A7C15ULL;

    explicit constexpr CounterRng(uint64_t seed = 0) : key_(mix(seed ^ 0x5851F42D4C957F2DULL)) {
    }

    static constexpr uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static constexpr result_type min() {
        return 0;
    }
    static constexpr result_type max() {
        return std::numeric_limits<uint64_t>::max();
    }

    /// Random access into the stream; does not advance it.
    constexpr uint64_t at(uint64_t index) const {
        return mix(key_ + (index + 1) * golden);
    }

    constexpr result_type operator()() {
        return at(counter_++);
    }

    /// Independent child stream identified by `tag`.
    constexpr CounterRng split(uint64_t tag) const {
        CounterRng child;
        child.key_ = mix(key_ ^ mix(tag + golden));
        return child;
    }
    constexpr CounterRng split(uint64_t tag_a, uint64_t tag_b) const {
        return split(tag_a).split(tag_b);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n), unbiased (rejection on the top bits).
    uint64_t below(uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        uint64_t limit = max() - max() % n;
        while (true) {
            uint64_t r = (*this)();
            if (r < limit) {
                return r % n;
            }
        }
    }

    uint64_t counter() const {
        return counter_;
    }
    uint64_t key() const {
        return key_;
    }

   private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

}  // namespace rqc
