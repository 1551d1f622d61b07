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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rqcsim/circuit.hpp"
#include "rqcsim/error.hpp"
#include "rqcsim/tensor.hpp"
#include "rqcsim/text.hpp"

namespace rqc {

/// Labels of the contraction of two label lists: a-only then b-only, each in
/// source order.
inline std::vector<Label> merged_labels(const std::vector<Label> &a, const std::vector<Label> &b) {
    std::vector<Label> out;
    for (Label l : a) {
        if (std::find(b.begin(), b.end(), l) == b.end()) out.push_back(l);
    }
    for (Label l : b) {
        if (std::find(a.begin(), a.end(), l) == a.end()) out.push_back(l);
    }
    return out;
}

struct NetworkNode {
    std::vector<Label> labels;
    /// Absent for structure-only networks.
    std::optional<TensorD> data;

    size_t rank() const {
        return labels.size();
    }
};

/// Undirected tensor network over binary indices. Each label sits on one node
/// (an open leg) or two nodes (a closed edge).
class TensorNetwork {
   public:
    size_t add_node(std::vector<Label> labels, std::optional<TensorD> data = std::nullopt) {
        if (data && data->labels() != labels) {
            throw UsageError("node data labels differ from node labels");
        }
        size_t id = next_id_++;
        for (Label l : labels) {
            auto &ends = edges_[l];
            if (ends.size() >= 2) {
                throw UsageError("label " + std::to_string(l) + " already joins two nodes");
            }
            ends.push_back(id);
        }
        nodes_.emplace(id, NetworkNode{std::move(labels), std::move(data)});
        return id;
    }

    const std::map<size_t, NetworkNode> &nodes() const {
        return nodes_;
    }
    const NetworkNode &node(size_t id) const {
        auto it = nodes_.find(id);
        if (it == nodes_.end()) throw UsageError("no network node " + std::to_string(id));
        return it->second;
    }
    size_t node_count() const {
        return nodes_.size();
    }
    size_t max_id() const {
        return nodes_.empty() ? 0 : nodes_.rbegin()->first;
    }
    bool has_data() const {
        return !nodes_.empty() &&
               std::all_of(nodes_.begin(), nodes_.end(), [](const auto &kv) { return kv.second.data.has_value(); });
    }

    /// Open legs in output order (the first open qubit is the most significant
    /// index of the result).
    const std::vector<Label> &open_labels() const {
        return open_;
    }
    void set_open_labels(std::vector<Label> open) {
        open_ = std::move(open);
    }

    std::vector<size_t> endpoints(Label l) const {
        auto it = edges_.find(l);
        return it == edges_.end() ? std::vector<size_t>{} : it->second;
    }

    /// Distinct nodes sharing at least one label with `id`, ascending.
    std::vector<size_t> neighbours(size_t id) const {
        std::vector<size_t> out;
        for (Label l : node(id).labels) {
            for (size_t other : edges_.at(l)) {
                if (other != id) out.push_back(other);
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    size_t shared_count(size_t a, size_t b) const {
        const auto &lb = node(b).labels;
        size_t n = 0;
        for (Label l : node(a).labels) n += std::count(lb.begin(), lb.end(), l);
        return n;
    }

    /// Contracts node `other` into node `keep`; `keep` retains its id and
    /// takes labels (keep-only, other-only).
    void merge(size_t keep, size_t other) {
        if (keep == other) throw UsageError("cannot merge a node with itself");
        auto &k = nodes_.at(keep);
        auto o = std::move(nodes_.at(other));
        nodes_.erase(other);
        auto labels = merged_labels(k.labels, o.labels);
        for (Label l : k.labels) {
            if (std::find(labels.begin(), labels.end(), l) == labels.end()) edges_.erase(l);
        }
        for (Label l : o.labels) {
            auto it = edges_.find(l);
            if (it == edges_.end()) continue;
            std::replace(it->second.begin(), it->second.end(), other, keep);
        }
        if (k.data && o.data) {
            k.data = contract_naive(*k.data, *o.data, 62);
        } else {
            k.data.reset();
        }
        k.labels = std::move(labels);
    }

    /// Checks the edge invariants: every label on one or two nodes, open
    /// labels exactly the single-ended ones.
    void validate() const {
        std::set<Label> open(open_.begin(), open_.end());
        if (open.size() != open_.size()) throw UsageError("duplicate open label");
        std::map<Label, int> count;
        for (const auto &[id, n] : nodes_) {
            for (Label l : n.labels) count[l]++;
        }
        for (const auto &[l, c] : count) {
            if (c > 2) throw UsageError("label " + std::to_string(l) + " on more than two nodes");
            if ((c == 1) != (open.count(l) == 1)) {
                throw UsageError("label " + std::to_string(l) + " has " + std::to_string(c) +
                                 " endpoints but open status disagrees");
            }
        }
        for (Label l : open_) {
            if (!count.count(l)) throw UsageError("open label " + std::to_string(l) + " not on any node");
        }
    }

    /// Connected components as sorted node id lists, ordered by smallest id.
    std::vector<std::vector<size_t>> components() const {
        std::vector<std::vector<size_t>> out;
        std::set<size_t> seen;
        for (const auto &[id, n] : nodes_) {
            if (seen.count(id)) continue;
            std::vector<size_t> comp, stack{id};
            seen.insert(id);
            while (!stack.empty()) {
                size_t v = stack.back();
                stack.pop_back();
                comp.push_back(v);
                for (size_t w : neighbours(v)) {
                    if (seen.insert(w).second) stack.push_back(w);
                }
            }
            std::sort(comp.begin(), comp.end());
            out.push_back(std::move(comp));
        }
        return out;
    }

   private:
    std::map<size_t, NetworkNode> nodes_;
    std::unordered_map<Label, std::vector<size_t>> edges_;
    std::vector<Label> open_;
    size_t next_id_ = 0;
};

namespace detail {

inline TensorD gate_tensor(const GateMatrix &g, std::vector<Label> labels) {
    return TensorD(std::move(labels), std::vector<std::complex<double>>(g.entries.begin(), g.entries.end()));
}

}  // namespace detail

/// Network whose contraction is the amplitude <output|C|0...0>, or the batch
/// of such amplitudes over the open qubits.
///
/// `output_bits` lists the measured values of the closed qubits in increasing
/// qubit order. Node ids: input vectors first (one per qubit), then gates in
/// circuit order, then the closed output vectors. Single-qubit gate labels are
/// (out, in); two-qubit gate labels are (out1, out2, in1, in2).
inline TensorNetwork circuit_to_network(const Circuit &c, std::string_view output_bits,
                                        const std::vector<int> &open_qubits = {}, bool with_data = true) {
    const int n = c.n_qubits;
    std::vector<bool> is_open(n, false);
    for (int q : open_qubits) {
        if (q < 0 || q >= n) throw UsageError("open qubit " + std::to_string(q) + " out of range");
        if (is_open[q]) throw UsageError("open qubit " + std::to_string(q) + " listed twice");
        is_open[q] = true;
    }
    if (output_bits.size() != static_cast<size_t>(n) - open_qubits.size()) {
        throw UsageError("bitstring length " + std::to_string(output_bits.size()) + " does not match " +
                         std::to_string(n - open_qubits.size()) + " closed qubits");
    }
    for (char ch : output_bits) {
        if (ch != '0' && ch != '1') throw UsageError("bitstring must contain only 0 and 1");
    }

    TensorNetwork net;
    Label next = 0;
    std::vector<Label> wire(n);
    auto data = [&](auto &&make) -> std::optional<TensorD> {
        if (!with_data) return std::nullopt;
        return make();
    };
    for (int q = 0; q < n; q++) {
        wire[q] = next++;
        net.add_node({wire[q]}, data([&] { return TensorD({wire[q]}, {1.0, 0.0}); }));
    }
    for (const auto &layer : c.layers) {
        for (const auto &op : layer.singles) {
            Label in = wire[op.qubit], out = next++;
            net.add_node({out, in}, data([&] { return detail::gate_tensor(single_qubit_gate(op.kind), {out, in}); }));
            wire[op.qubit] = out;
        }
        for (const auto &op : layer.pairs) {
            Label i1 = wire[op.q1], i2 = wire[op.q2];
            Label o1 = next++, o2 = next++;
            net.add_node({o1, o2, i1, i2},
                         data([&] { return detail::gate_tensor(fsim(op.params), {o1, o2, i1, i2}); }));
            wire[op.q1] = o1;
            wire[op.q2] = o2;
        }
    }
    size_t bit = 0;
    for (int q = 0; q < n; q++) {
        if (is_open[q]) continue;
        bool one = output_bits[bit++] == '1';
        net.add_node({wire[q]}, data([&] { return TensorD({wire[q]}, {one ? 0.0 : 1.0, one ? 1.0 : 0.0}); }));
    }
    std::vector<Label> open;
    for (int q : open_qubits) open.push_back(wire[q]);
    net.set_open_labels(std::move(open));
    return net;
}

/// Absorbs low-rank nodes and pre-contracts rank-nonincreasing pairs.
///
/// Rules, applied until none fires:
///   1. The lowest-rank node of rank <= 2 that has a neighbour (ties by
///      smallest id) is merged into its highest-rank neighbour (ties by
///      smallest id).
///   2. Adjacent nodes both of rank > 2 are merged when the result's rank is
///      at most the larger of the two; pairs are scanned by ascending ids.
///   3. A scalar node is merged into the smallest-id other node.
/// Merges keep the id of the absorbing (higher-rank) node, so the outcome
/// depends only on the network structure.
inline TensorNetwork simplify(TensorNetwork net) {
    while (true) {
        std::optional<size_t> low;
        for (const auto &[id, n] : net.nodes()) {
            if (n.rank() > 2 || (low && net.node(*low).rank() <= n.rank())) continue;
            if (!net.neighbours(id).empty()) low = id;
        }
        if (low) {
            size_t best = 0;
            bool have = false;
            for (size_t w : net.neighbours(*low)) {
                if (!have || net.node(w).rank() > net.node(best).rank()) {
                    best = w;
                    have = true;
                }
            }
            net.merge(best, *low);
            continue;
        }

        bool merged = false;
        for (const auto &[id, n] : net.nodes()) {
            if (n.rank() <= 2) continue;
            for (size_t w : net.neighbours(id)) {
                if (w < id) continue;
                size_t rw = net.node(w).rank();
                if (rw <= 2) continue;
                size_t r = n.rank() + rw - 2 * net.shared_count(id, w);
                if (r <= std::max(n.rank(), rw)) {
                    if (rw > n.rank()) {
                        net.merge(w, id);
                    } else {
                        net.merge(id, w);
                    }
                    merged = true;
                    break;
                }
            }
            if (merged) break;
        }
        if (merged) continue;

        if (net.node_count() > 1) {
            auto scalar = std::find_if(net.nodes().begin(), net.nodes().end(),
                                       [](const auto &kv) { return kv.second.rank() == 0; });
            if (scalar != net.nodes().end()) {
                size_t sid = scalar->first;
                size_t target = net.nodes().begin()->first == sid ? std::next(net.nodes().begin())->first
                                                                  : net.nodes().begin()->first;
                net.merge(target, sid);
                continue;
            }
        }
        return net;
    }
}

/// Contracts every node of a network with data, always merging the connected
/// pair whose result rank is smallest. Intended as a reference on small
/// networks; the result's labels follow open_labels().
inline TensorD contract_all(TensorNetwork net) {
    if (!net.has_data()) throw UsageError("network has no tensor data");
    while (net.node_count() > 1) {
        size_t best_a = 0, best_b = 0, best_r = SIZE_MAX;
        for (const auto &[id, n] : net.nodes()) {
            for (size_t w : net.neighbours(id)) {
                if (w < id) continue;
                size_t r = n.rank() + net.node(w).rank() - 2 * net.shared_count(id, w);
                if (r < best_r) {
                    best_r = r;
                    best_a = id;
                    best_b = w;
                }
            }
        }
        if (best_r == SIZE_MAX) {
            auto it = net.nodes().begin();
            best_a = it->first;
            best_b = std::next(it)->first;
        }
        net.merge(best_a, best_b);
    }
    const auto &root = net.nodes().begin()->second;
    return permute(*root.data, net.open_labels());
}

// Network export, one record per line:
//   open <label,...>
//   node <id> <label,...>
// An empty label list is written as "-". Lines starting with '#' are comments.

inline std::string serialize_network(const TensorNetwork &net) {
    auto list = [](const std::vector<Label> &ls) {
        if (ls.empty()) return std::string("-");
        std::string s;
        for (size_t i = 0; i < ls.size(); i++) {
            if (i) s += ',';
            s += std::to_string(ls[i]);
        }
        return s;
    };
    std::string out = "open " + list(net.open_labels()) + "\n";
    for (const auto &[id, n] : net.nodes()) {
        out += "node " + std::to_string(id) + " " + list(n.labels) + "\n";
    }
    return out;
}

/// Structure-only network from its export. Node ids are renumbered densely in
/// file order; the returned map gives file id -> new id.
inline TensorNetwork parse_network(std::string_view text, std::map<size_t, size_t> *ids = nullptr) {
    TensorNetwork net;
    std::vector<Label> open;
    text::LineReader reader(text);
    std::string_view line;
    auto labels = [](std::string_view tok, size_t ln) {
        std::vector<Label> out;
        for (auto part : text::split_commas(tok)) out.push_back(text::parse_int<Label>(part, ln));
        return out;
    };
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) continue;
        size_t ln = reader.line_no();
        if (tok[0] == "open" && tok.size() == 2) {
            open = labels(tok[1], ln);
        } else if (tok[0] == "node" && tok.size() == 3) {
            size_t file_id = text::parse_int<size_t>(tok[1], ln);
            try {
                size_t id = net.add_node(labels(tok[2], ln));
                if (ids) (*ids)[file_id] = id;
            } catch (const UsageError &e) {
                throw FormatError(e.what(), ln);
            }
        } else {
            throw FormatError("expected 'open <labels>' or 'node <id> <labels>'", ln);
        }
    }
    net.set_open_labels(std::move(open));
    try {
        net.validate();
    } catch (const UsageError &e) {
        throw FormatError(e.what(), reader.line_no());
    }
    return net;
}

}  // namespace rqc
