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

// Small random networks for the order and engine suites.

#include <vector>

#include "rqcsim/network.hpp"
#include "rqcsim/rng.hpp"

namespace rqc::testing {

/// Connected network on `m` nodes laid out on a grid of width `width`:
/// a spanning path plus random grid edges, some doubled, and `open` dangling
/// legs on random nodes. Tensor entries are random when `with_data` is set.
inline TensorNetwork random_network(CounterRng rng, size_t m, size_t width = 4, size_t open = 0,
                                    bool with_data = true) {
    std::vector<std::vector<Label>> labels(m);
    Label next = 0;
    auto edge = [&](size_t a, size_t b) {
        labels[a].push_back(next);
        labels[b].push_back(next);
        next++;
    };
    for (size_t i = 0; i + 1 < m; i++) edge(i, i + 1);
    for (size_t i = 0; i < m; i++) {
        size_t down = i + width;
        if (down < m && rng.uniform01() < 0.7) edge(i, down);
        if (rng.uniform01() < 0.25 && i + 1 < m) edge(i, i + 1);
    }
    std::vector<Label> open_labels;
    for (size_t k = 0; k < open; k++) {
        size_t v = rng.below(m);
        labels[v].push_back(next);
        open_labels.push_back(next++);
    }
    TensorNetwork net;
    CounterRng data_rng = rng.split(99);
    for (size_t i = 0; i < m; i++) {
        std::optional<TensorD> data;
        if (with_data) data = convert<std::complex<double>>(random_tensor(labels[i], data_rng.split(i)));
        net.add_node(labels[i], std::move(data));
    }
    net.set_open_labels(open_labels);
    return net;
}

}  // namespace rqc::testing
