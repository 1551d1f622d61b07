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

// Contraction order search under a memory bound.
//
// Sizes are tracked in log2 (every index has dimension 2). Contracting
// intermediates with label sets L and R costs 8 * 2^|L u R| flops, one complex
// multiply-add counted as 8 real operations; labels fixed by slicing drop out
// of every set and the total is multiplied by the slice count.

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "rqcsim/error.hpp"
#include "rqcsim/network.hpp"
#include "rqcsim/rng.hpp"
#include "rqcsim/text.hpp"

namespace rqc {

/// Fixed-width bitset over dense label indices.
class LabelSet {
   public:
    LabelSet() = default;
    explicit LabelSet(size_t bits) : w_((bits + 63) / 64, 0) {
    }

    void set(size_t i) {
        w_[i / 64] |= uint64_t{1} << (i % 64);
    }
    void reset(size_t i) {
        w_[i / 64] &= ~(uint64_t{1} << (i % 64));
    }
    bool test(size_t i) const {
        return (w_[i / 64] >> (i % 64)) & 1;
    }
    size_t count() const {
        size_t n = 0;
        for (auto x : w_) n += std::popcount(x);
        return n;
    }
    bool any() const {
        return std::any_of(w_.begin(), w_.end(), [](uint64_t x) { return x != 0; });
    }

    LabelSet operator|(const LabelSet &o) const {
        LabelSet r = *this;
        for (size_t i = 0; i < w_.size(); i++) r.w_[i] |= o.w_[i];
        return r;
    }
    LabelSet operator&(const LabelSet &o) const {
        LabelSet r = *this;
        for (size_t i = 0; i < w_.size(); i++) r.w_[i] &= o.w_[i];
        return r;
    }
    LabelSet operator^(const LabelSet &o) const {
        LabelSet r = *this;
        for (size_t i = 0; i < w_.size(); i++) r.w_[i] ^= o.w_[i];
        return r;
    }
    LabelSet minus(const LabelSet &o) const {
        LabelSet r = *this;
        for (size_t i = 0; i < w_.size(); i++) r.w_[i] &= ~o.w_[i];
        return r;
    }
    /// |(*this | o) \ drop| without building temporaries.
    size_t union_count(const LabelSet &o, const LabelSet &drop) const {
        size_t n = 0;
        for (size_t i = 0; i < w_.size(); i++) n += std::popcount((w_[i] | o.w_[i]) & ~drop.w_[i]);
        return n;
    }
    size_t count_minus(const LabelSet &drop) const {
        size_t n = 0;
        for (size_t i = 0; i < w_.size(); i++) n += std::popcount(w_[i] & ~drop.w_[i]);
        return n;
    }

    template <typename F>
    void for_each(F &&f) const {
        for (size_t i = 0; i < w_.size(); i++) {
            for (uint64_t x = w_[i]; x; x &= x - 1) f(i * 64 + std::countr_zero(x));
        }
    }

    bool operator==(const LabelSet &) const = default;

   private:
    std::vector<uint64_t> w_;
};

/// Binary contraction tree. Leaves carry network node ids.
struct ContractionTree {
    struct Node {
        int left = -1;
        int right = -1;
        size_t leaf = 0;
    };
    std::vector<Node> nodes;
    int root = -1;

    bool is_leaf(int v) const {
        return nodes[v].left < 0;
    }
    int add_leaf(size_t id) {
        nodes.push_back({-1, -1, id});
        return static_cast<int>(nodes.size()) - 1;
    }
    int add_join(int l, int r) {
        nodes.push_back({l, r, 0});
        return static_cast<int>(nodes.size()) - 1;
    }

    /// Reachable nodes, children before parents, left subtree first.
    std::vector<int> postorder() const {
        std::vector<int> out;
        if (root < 0) return out;
        std::vector<std::pair<int, bool>> stack{{root, false}};
        while (!stack.empty()) {
            auto [v, expanded] = stack.back();
            stack.pop_back();
            if (expanded || is_leaf(v)) {
                out.push_back(v);
            } else {
                stack.push_back({v, true});
                stack.push_back({nodes[v].right, false});
                stack.push_back({nodes[v].left, false});
            }
        }
        return out;
    }

    std::vector<size_t> leaves() const {
        std::vector<size_t> out;
        for (int v : postorder()) {
            if (is_leaf(v)) out.push_back(nodes[v].leaf);
        }
        return out;
    }

    /// Copy holding only reachable nodes, renumbered in postorder.
    ContractionTree compact() const {
        ContractionTree t;
        std::unordered_map<int, int> map;
        for (int v : postorder()) {
            map[v] = is_leaf(v) ? t.add_leaf(nodes[v].leaf) : t.add_join(map.at(nodes[v].left), map.at(nodes[v].right));
        }
        t.root = root < 0 ? -1 : map.at(root);
        return t;
    }
};

struct SlicePlan {
    std::vector<Label> sliced;

    uint64_t n_slices() const {
        return uint64_t{1} << sliced.size();
    }
};

struct CostSummary {
    /// Real floating-point operations over all slices.
    double flops = 0;
    uint64_t n_slices = 1;
    int max_intermediate_log2 = 0;
};

struct ContractionPlan {
    int max_size_log2 = 28;
    ContractionTree tree;
    SlicePlan slices;
    CostSummary cost;
};

namespace detail {

/// Dense label numbering of a network plus per-node label sets.
struct LabelSpace {
    std::vector<Label> labels;  // dense index -> label, ascending
    std::unordered_map<Label, size_t> index;
    std::map<size_t, LabelSet> node_sets;
    LabelSet open;

    explicit LabelSpace(const TensorNetwork &net) {
        std::set<Label> all;
        for (const auto &[id, n] : net.nodes()) all.insert(n.labels.begin(), n.labels.end());
        labels.assign(all.begin(), all.end());
        for (size_t i = 0; i < labels.size(); i++) index[labels[i]] = i;
        for (const auto &[id, n] : net.nodes()) {
            LabelSet s = empty();
            for (Label l : n.labels) s.set(index.at(l));
            node_sets.emplace(id, std::move(s));
        }
        open = empty();
        for (Label l : net.open_labels()) open.set(index.at(l));
    }

    LabelSet empty() const {
        return LabelSet(labels.size());
    }

    LabelSet set_of(const std::vector<Label> &ls) const {
        LabelSet s = empty();
        for (Label l : ls) {
            auto it = index.find(l);
            if (it == index.end()) throw UsageError("label " + std::to_string(l) + " not in network");
            s.set(it->second);
        }
        return s;
    }
};

/// Label set of every tree node, indexed like tree.nodes (unreachable nodes
/// left empty).
inline std::vector<LabelSet> tree_sets(const LabelSpace &space, const ContractionTree &tree) {
    std::vector<LabelSet> sets(tree.nodes.size(), space.empty());
    for (int v : tree.postorder()) {
        const auto &n = tree.nodes[v];
        sets[v] = tree.is_leaf(v) ? space.node_sets.at(n.leaf) : sets[n.left] ^ sets[n.right];
    }
    return sets;
}

inline void check_tree(const TensorNetwork &net, const ContractionTree &tree) {
    if (tree.root < 0 || tree.root >= static_cast<int>(tree.nodes.size())) {
        throw UsageError("contraction tree has no root");
    }
    for (const auto &n : tree.nodes) {
        if ((n.left < 0) != (n.right < 0) || n.left >= static_cast<int>(tree.nodes.size()) ||
            n.right >= static_cast<int>(tree.nodes.size())) {
            throw UsageError("malformed contraction tree node");
        }
    }
    auto leaves = tree.leaves();
    std::sort(leaves.begin(), leaves.end());
    std::vector<size_t> ids;
    for (const auto &[id, n] : net.nodes()) ids.push_back(id);
    if (leaves != ids) throw UsageError("contraction tree leaves differ from network nodes");
}

/// Lexicographic objective: how far the peak exceeds the bound, then flops.
struct Key {
    int excess = 0;
    double flops = 0;
    bool operator<(const Key &o) const {
        return excess != o.excess ? excess < o.excess : flops < o.flops;
    }
};

inline int excess_of(size_t size_log2, int bound) {
    return bound < 0 ? 0 : std::max(0, static_cast<int>(size_log2) - bound);
}

/// Best binary tree over `items` by dynamic programming over all subsets.
/// Appends the new join nodes to `tree` and returns the root over the given
/// item node indices.
inline int optimal_subtree(ContractionTree &tree, const std::vector<int> &item_nodes, const std::vector<LabelSet> &items,
                           const LabelSet &sliced, int bound, Key *key_out = nullptr) {
    const size_t m = items.size();
    if (m == 1) {
        if (key_out) *key_out = {excess_of(items[0].count_minus(sliced), bound), 0};
        return item_nodes[0];
    }
    const size_t full = (size_t{1} << m) - 1;
    std::vector<LabelSet> set(full + 1, LabelSet());
    std::vector<Key> best(full + 1);
    std::vector<size_t> split(full + 1, 0);
    set[0] = items[0] ^ items[0];
    for (size_t mask = 1; mask <= full; mask++) {
        size_t low = std::countr_zero(mask);
        set[mask] = set[mask & (mask - 1)] ^ items[low];
        if ((mask & (mask - 1)) == 0) {
            best[mask] = {excess_of(set[mask].count_minus(sliced), bound), 0};
            continue;
        }
        int own = excess_of(set[mask].count_minus(sliced), bound);
        size_t lowbit = mask & (~mask + 1);
        Key winner{std::numeric_limits<int>::max(), 0};
        for (size_t sub = (mask - 1) & mask; sub; sub = (sub - 1) & mask) {
            if (!(sub & lowbit)) continue;
            size_t other = mask ^ sub;
            Key k;
            k.excess = std::max({own, best[sub].excess, best[other].excess});
            k.flops = best[sub].flops + best[other].flops + std::ldexp(8.0, static_cast<int>(set[sub].union_count(set[other], sliced)));
            if (k < winner) {
                winner = k;
                split[mask] = sub;
            }
        }
        best[mask] = winner;
    }
    std::function<int(size_t)> build = [&](size_t mask) -> int {
        if ((mask & (mask - 1)) == 0) return item_nodes[std::countr_zero(mask)];
        int l = build(split[mask]);
        int r = build(mask ^ split[mask]);
        return tree.add_join(l, r);
    };
    if (key_out) *key_out = best[full];
    return build(full);
}

/// Key of the subtree rooted at `v` whose frontier is `frontier`.
inline Key subtree_key(const ContractionTree &tree, int v, const std::vector<LabelSet> &sets, const LabelSet &sliced,
                       int bound, const std::set<int> &frontier) {
    Key k;
    std::vector<int> stack{v};
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        k.excess = std::max(k.excess, excess_of(sets[u].count_minus(sliced), bound));
        if (frontier.count(u)) continue;
        const auto &n = tree.nodes[u];
        k.flops += std::ldexp(8.0, static_cast<int>(sets[n.left].union_count(sets[n.right], sliced)));
        stack.push_back(n.left);
        stack.push_back(n.right);
    }
    return k;
}

inline double tree_flops_per_slice(const ContractionTree &tree, const std::vector<LabelSet> &sets,
                                   const LabelSet &sliced) {
    double f = 0;
    for (int v : tree.postorder()) {
        if (tree.is_leaf(v)) continue;
        const auto &n = tree.nodes[v];
        f += std::ldexp(8.0, static_cast<int>(sets[n.left].union_count(sets[n.right], sliced)));
    }
    return f;
}

/// Re-optimizes, by exhaustive search, the subtree below each join node down
/// to a frontier of at most `limit` items (grown by expanding the largest
/// intermediate first). A subtree is replaced only when strictly better.
/// With `only` set, visits only joins whose operands carry that label.
inline void reconfigure(const LabelSpace &space, ContractionTree &tree, const LabelSet &sliced, int bound, size_t limit,
                        std::optional<size_t> only = std::nullopt) {
    if (limit < 3) return;
    auto sets = tree_sets(space, tree);
    for (int v : tree.postorder()) {
        if (tree.is_leaf(v)) continue;
        const auto &n = tree.nodes[v];
        if (only && !sets[n.left].test(*only) && !sets[n.right].test(*only)) continue;
        std::vector<int> frontier{n.left, n.right};
        while (frontier.size() < limit) {
            int pick = -1;
            size_t pick_size = 0;
            for (size_t i = 0; i < frontier.size(); i++) {
                int u = frontier[i];
                if (tree.is_leaf(u)) continue;
                size_t s = sets[u].count_minus(sliced);
                if (pick < 0 || s > pick_size) {
                    pick = static_cast<int>(i);
                    pick_size = s;
                }
            }
            if (pick < 0) break;
            int u = frontier[pick];
            frontier.erase(frontier.begin() + pick);
            frontier.push_back(tree.nodes[u].left);
            frontier.push_back(tree.nodes[u].right);
        }
        if (frontier.size() < 3) continue;
        std::set<int> fset(frontier.begin(), frontier.end());
        Key old = subtree_key(tree, v, sets, sliced, bound, fset);
        std::vector<LabelSet> items;
        for (int u : frontier) items.push_back(sets[u]);
        ContractionTree scratch = tree;
        Key fresh;
        int r = optimal_subtree(scratch, frontier, items, sliced, bound, &fresh);
        if (!(fresh < old)) continue;
        // Graft: v takes the children of the new subtree root.
        tree = std::move(scratch);
        tree.nodes[v].left = tree.nodes[r].left;
        tree.nodes[v].right = tree.nodes[r].right;
        for (size_t u = sets.size(); u < tree.nodes.size(); u++) {
            const auto &nu = tree.nodes[u];
            sets.push_back(sets[nu.left] ^ sets[nu.right]);
        }
    }
    tree = tree.compact();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Exact symbolic cost of contracting `net` along `tree` with the plan's
/// sliced labels fixed. Reads no tensor data.
inline CostSummary cost(const TensorNetwork &net, const ContractionTree &tree, const SlicePlan &plan) {
    detail::check_tree(net, tree);
    detail::LabelSpace space(net);
    LabelSet sliced = space.set_of(plan.sliced);
    if ((sliced & space.open).any()) throw UsageError("open labels cannot be sliced");
    if (sliced.count() != plan.sliced.size()) throw UsageError("sliced label listed twice");
    auto sets = detail::tree_sets(space, tree);
    CostSummary c;
    c.n_slices = plan.n_slices();
    for (int v : tree.postorder()) {
        c.max_intermediate_log2 = std::max(c.max_intermediate_log2, static_cast<int>(sets[v].count_minus(sliced)));
    }
    c.flops = detail::tree_flops_per_slice(tree, sets, sliced) * static_cast<double>(c.n_slices);
    return c;
}

inline nlohmann::ordered_json cost_json(const CostSummary &c) {
    nlohmann::ordered_json j;
    j["flops"] = c.flops;
    j["n_slices"] = c.n_slices;
    j["max_intermediate_log2"] = c.max_intermediate_log2;
    return j;
}

// ---------------------------------------------------------------------------
// Exhaustive search
// ---------------------------------------------------------------------------

inline constexpr size_t kExhaustiveLimit = 12;

/// Flops-optimal tree over all binary contraction trees (outer products
/// included), by dynamic programming over node subsets.
inline ContractionTree exhaustive_order(const TensorNetwork &net) {
    if (net.node_count() == 0) throw UsageError("empty network");
    if (net.node_count() > kExhaustiveLimit) {
        throw UsageError("exhaustive search limited to " + std::to_string(kExhaustiveLimit) + " nodes, got " +
                         std::to_string(net.node_count()));
    }
    detail::LabelSpace space(net);
    ContractionTree tree;
    std::vector<int> leaves;
    std::vector<LabelSet> items;
    for (const auto &[id, n] : net.nodes()) {
        leaves.push_back(tree.add_leaf(id));
        items.push_back(space.node_sets.at(id));
    }
    tree.root = detail::optimal_subtree(tree, leaves, items, space.empty(), -1);
    return tree.compact();
}

// ---------------------------------------------------------------------------
// Recursive partitioning
// ---------------------------------------------------------------------------

struct PartitionOptions {
    double imbalance = 0.1;
    uint64_t seed = 0;
    /// Parts at most this large are ordered exhaustively.
    size_t leaf_size = 8;
    /// Random initial cuts tried per bisection.
    int trials = 4;
};

namespace detail {

/// Balanced bipartition of `ids` minimizing the number of cut labels, by
/// Fiduccia-Mattheyses passes from random initial cuts. Returns side flags.
inline std::vector<int> bisect(const TensorNetwork &net, const std::vector<size_t> &ids, const PartitionOptions &opt,
                               CounterRng &rng) {
    const size_t n = ids.size();
    std::unordered_map<size_t, int> local;
    for (size_t i = 0; i < n; i++) local[ids[i]] = static_cast<int>(i);
    std::vector<std::vector<std::pair<int, int>>> adj(n);
    for (size_t i = 0; i < n; i++) {
        for (size_t w : net.neighbours(ids[i])) {
            auto it = local.find(w);
            if (it != local.end()) adj[i].push_back({it->second, static_cast<int>(net.shared_count(ids[i], w))});
        }
    }
    const size_t lo = std::max<size_t>(1, static_cast<size_t>(std::floor(n * (0.5 - opt.imbalance))));
    const size_t hi = std::min<size_t>(n - 1, static_cast<size_t>(std::ceil(n * (0.5 + opt.imbalance))));
    auto cut_of = [&](const std::vector<int> &side) {
        int c = 0;
        for (size_t i = 0; i < n; i++)
            for (auto [j, wgt] : adj[i])
                if (side[i] != side[j]) c += wgt;
        return c / 2;
    };

    std::vector<int> best_side;
    int best_cut = std::numeric_limits<int>::max();
    for (int trial = 0; trial < std::max(1, opt.trials); trial++) {
        std::vector<size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (size_t i = n; i > 1; i--) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<int> side(n, 1);
        for (size_t i = 0; i < n / 2; i++) side[perm[i]] = 0;
        size_t count0 = n / 2;
        int cut = cut_of(side);
        for (int pass = 0; pass < 10; pass++) {
            std::vector<int> gain(n, 0);
            for (size_t i = 0; i < n; i++)
                for (auto [j, wgt] : adj[i]) gain[i] += side[i] != side[j] ? wgt : -wgt;
            std::vector<bool> locked(n, false);
            std::vector<int> moves;
            int running = cut, best_running = cut;
            size_t best_prefix = 0, c0 = count0;
            for (size_t step = 0; step < n; step++) {
                int pick = -1;
                for (size_t i = 0; i < n; i++) {
                    if (locked[i]) continue;
                    size_t next0 = side[i] == 0 ? c0 - 1 : c0 + 1;
                    if (next0 < lo || next0 > hi) continue;
                    if (pick < 0 || gain[i] > gain[pick]) pick = static_cast<int>(i);
                }
                if (pick < 0) break;
                running -= gain[pick];
                c0 = side[pick] == 0 ? c0 - 1 : c0 + 1;
                side[pick] ^= 1;
                locked[pick] = true;
                moves.push_back(pick);
                gain[pick] = -gain[pick];
                for (auto [j, wgt] : adj[pick]) gain[j] += side[j] != side[pick] ? 2 * wgt : -2 * wgt;
                if (running < best_running) {
                    best_running = running;
                    best_prefix = moves.size();
                }
            }
            for (size_t k = moves.size(); k > best_prefix; k--) {
                int v = moves[k - 1];
                c0 = side[v] == 0 ? c0 - 1 : c0 + 1;
                side[v] ^= 1;
            }
            count0 = c0;
            if (best_running >= cut) break;
            cut = best_running;
        }
        if (cut < best_cut) {
            best_cut = cut;
            best_side = side;
        }
    }
    return best_side;
}

inline std::vector<std::vector<size_t>> components_within(const TensorNetwork &net, const std::vector<size_t> &ids) {
    std::set<size_t> in(ids.begin(), ids.end()), seen;
    std::vector<std::vector<size_t>> out;
    for (size_t id : ids) {
        if (seen.count(id)) continue;
        std::vector<size_t> comp, stack{id};
        seen.insert(id);
        while (!stack.empty()) {
            size_t v = stack.back();
            stack.pop_back();
            comp.push_back(v);
            for (size_t w : net.neighbours(v)) {
                if (in.count(w) && seen.insert(w).second) stack.push_back(w);
            }
        }
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
    }
    return out;
}

inline int partition_build(const TensorNetwork &net, const LabelSpace &space, ContractionTree &tree,
                           const std::vector<size_t> &ids, const PartitionOptions &opt, CounterRng &rng) {
    if (ids.size() == 1) return tree.add_leaf(ids[0]);
    if (ids.size() <= std::min(opt.leaf_size, kExhaustiveLimit)) {
        std::vector<int> leaves;
        std::vector<LabelSet> items;
        for (size_t id : ids) {
            leaves.push_back(tree.add_leaf(id));
            items.push_back(space.node_sets.at(id));
        }
        return optimal_subtree(tree, leaves, items, space.empty(), -1);
    }
    auto comps = components_within(net, ids);
    if (comps.size() > 1) {
        int acc = partition_build(net, space, tree, comps[0], opt, rng);
        for (size_t i = 1; i < comps.size(); i++) {
            acc = tree.add_join(acc, partition_build(net, space, tree, comps[i], opt, rng));
        }
        return acc;
    }
    auto side = bisect(net, ids, opt, rng);
    std::vector<size_t> a, b;
    for (size_t i = 0; i < ids.size(); i++) (side[i] == 0 ? a : b).push_back(ids[i]);
    int l = partition_build(net, space, tree, a, opt, rng);
    int r = partition_build(net, space, tree, b, opt, rng);
    return tree.add_join(l, r);
}

}  // namespace detail

/// Contraction tree from recursive balanced bisection of the node set. Parts
/// that fall apart into disconnected pieces are ordered independently and
/// joined by outer products.
inline ContractionTree partition_search(const TensorNetwork &net, const PartitionOptions &opt = {}) {
    if (net.node_count() == 0) throw UsageError("empty network");
    if (opt.imbalance < 0 || opt.imbalance >= 0.5) throw UsageError("imbalance must be in [0, 0.5)");
    detail::LabelSpace space(net);
    CounterRng rng(opt.seed);
    std::vector<size_t> ids;
    for (const auto &[id, n] : net.nodes()) ids.push_back(id);
    ContractionTree tree;
    tree.root = detail::partition_build(net, space, tree, ids, opt, rng);
    return tree.compact();
}

// ---------------------------------------------------------------------------
// Slicing
// ---------------------------------------------------------------------------

struct SliceOptions {
    int max_size_log2 = 28;
    size_t reconfigure_size = 10;
};

/// Slices labels until every intermediate fits in 2^max_size_log2 entries.
///
/// Each round looks at the largest intermediate and slices the label on it
/// that gives the smallest total flops (ties to the smaller label), then
/// re-optimizes the subtrees touching that label. A final reconfiguration
/// pass runs over the whole tree.
inline std::pair<ContractionTree, SlicePlan> slice_and_reconfigure(const TensorNetwork &net, ContractionTree tree,
                                                                   const SliceOptions &opt = {}) {
    detail::check_tree(net, tree);
    if (opt.max_size_log2 < 0) throw UsageError("max size must be non-negative");
    detail::LabelSpace space(net);
    LabelSet sliced = space.empty();
    SlicePlan plan;
    while (true) {
        auto sets = detail::tree_sets(space, tree);
        int big = -1;
        size_t big_size = 0;
        for (int v : tree.postorder()) {
            size_t s = sets[v].count_minus(sliced);
            if (big < 0 || s > big_size) {
                big = v;
                big_size = s;
            }
        }
        if (static_cast<int>(big_size) <= opt.max_size_log2) break;
        auto candidates = sets[big].minus(sliced).minus(space.open);
        if (!candidates.any()) {
            throw ResourceError("memory bound 2^" + std::to_string(opt.max_size_log2) +
                                " is below a tensor made only of open legs (2^" + std::to_string(big_size) + ")");
        }
        size_t pick = 0;
        double pick_flops = std::numeric_limits<double>::infinity();
        candidates.for_each([&](size_t l) {
            LabelSet trial = sliced;
            trial.set(l);
            double f = detail::tree_flops_per_slice(tree, sets, trial);
            if (f < pick_flops) {
                pick_flops = f;
                pick = l;
            }
        });
        sliced.set(pick);
        plan.sliced.push_back(space.labels[pick]);
        detail::reconfigure(space, tree, sliced, opt.max_size_log2, opt.reconfigure_size, pick);
    }
    detail::reconfigure(space, tree, sliced, opt.max_size_log2, opt.reconfigure_size);
    return {tree.compact(), plan};
}

// ---------------------------------------------------------------------------
// Candidate search
// ---------------------------------------------------------------------------

struct OrderOptions {
    int max_size_log2 = 28;
    size_t n_candidates = 100;
    uint64_t seed = 0;
    double imbalance = 0.1;
    size_t leaf_size = 8;
    size_t reconfigure_size = 10;
};

/// Measures one candidate (for example the wall time of a single slice);
/// lower is better.
using PlanBenchmark = std::function<double(const ContractionPlan &)>;

/// Runs the partition, slice and reconfigure pipeline once per candidate seed
/// and returns the candidate with the smallest modeled flops, or the smallest
/// benchmark score when one is given. Ties go to the earlier candidate.
inline ContractionPlan find_order(const TensorNetwork &net, const OrderOptions &opt = {},
                                  const PlanBenchmark &benchmark = nullptr) {
    if (opt.n_candidates < 1) throw UsageError("need at least one candidate");
    CounterRng root(opt.seed);
    std::optional<ContractionPlan> best;
    double best_score = 0;
    for (size_t i = 0; i < opt.n_candidates; i++) {
        PartitionOptions popt;
        popt.imbalance = opt.imbalance;
        popt.leaf_size = opt.leaf_size;
        popt.seed = root.at(i);
        ContractionPlan plan;
        plan.max_size_log2 = opt.max_size_log2;
        auto [tree, slices] =
            slice_and_reconfigure(net, partition_search(net, popt), {opt.max_size_log2, opt.reconfigure_size});
        plan.tree = std::move(tree);
        plan.slices = std::move(slices);
        plan.cost = cost(net, plan.tree, plan.slices);
        double score = benchmark ? benchmark(plan) : plan.cost.flops;
        if (!best || score < best_score) {
            best = std::move(plan);
            best_score = score;
        }
    }
    return *best;
}

// ---------------------------------------------------------------------------
// Plan file
// ---------------------------------------------------------------------------
//
//   maxsize <log2>
//   slices <label,...>          (empty list: nothing after the keyword)
//   contract <idA> <idB> -> <idC>
//
// Contract lines are in postorder. Leaf ids are network node ids; the
// intermediate ids count up from the largest node id plus one.

inline std::string serialize_plan(const TensorNetwork &net, const ContractionPlan &plan) {
    std::string out = "maxsize " + std::to_string(plan.max_size_log2) + "\nslices";
    for (size_t i = 0; i < plan.slices.sliced.size(); i++) {
        out += (i ? "," : " ") + std::to_string(plan.slices.sliced[i]);
    }
    out += "\n";
    size_t next = net.max_id() + 1;
    std::unordered_map<int, size_t> id;
    for (int v : plan.tree.postorder()) {
        const auto &n = plan.tree.nodes[v];
        if (plan.tree.is_leaf(v)) {
            id[v] = n.leaf;
            continue;
        }
        id[v] = next++;
        out += "contract " + std::to_string(id.at(n.left)) + " " + std::to_string(id.at(n.right)) + " -> " +
               std::to_string(id[v]) + "\n";
    }
    return out;
}

/// Reads a plan for `net` and recomputes its cost.
inline ContractionPlan parse_plan(std::string_view text, const TensorNetwork &net) {
    ContractionPlan plan;
    text::LineReader reader(text);
    std::string_view line;
    int stage = 0;
    std::unordered_map<size_t, int> live;
    for (const auto &[id, n] : net.nodes()) live[id] = plan.tree.add_leaf(id);
    std::set<size_t> used;
    while (reader.next(line)) {
        auto tok = text::tokenize(line);
        if (tok.empty()) continue;
        size_t ln = reader.line_no();
        if (stage == 0) {
            if (tok.size() != 2 || tok[0] != "maxsize") throw FormatError("expected 'maxsize <log2>'", ln);
            plan.max_size_log2 = text::parse_int<int>(tok[1], ln);
            stage = 1;
        } else if (stage == 1) {
            if (tok[0] != "slices" || tok.size() > 2) throw FormatError("expected 'slices <label,...>'", ln);
            if (tok.size() == 2) {
                for (auto part : text::split_commas(tok[1])) plan.slices.sliced.push_back(text::parse_int<Label>(part, ln));
            }
            stage = 2;
        } else {
            if (tok.size() != 5 || tok[0] != "contract" || tok[3] != "->") {
                throw FormatError("expected 'contract <idA> <idB> -> <idC>'", ln);
            }
            size_t a = text::parse_int<size_t>(tok[1], ln);
            size_t b = text::parse_int<size_t>(tok[2], ln);
            size_t c = text::parse_int<size_t>(tok[4], ln);
            for (size_t x : {a, b}) {
                if (!live.count(x)) throw FormatError("id " + std::to_string(x) + " is unknown or already used", ln);
            }
            if (a == b) throw FormatError("cannot contract id " + std::to_string(a) + " with itself", ln);
            if (live.count(c) || used.count(c) || net.nodes().count(c)) {
                throw FormatError("result id " + std::to_string(c) + " already defined", ln);
            }
            int v = plan.tree.add_join(live.at(a), live.at(b));
            live.erase(a);
            live.erase(b);
            used.insert(a);
            used.insert(b);
            live[c] = v;
        }
    }
    if (stage < 2) throw FormatError("plan header incomplete", reader.line_no());
    if (live.size() != 1) {
        throw FormatError("plan leaves " + std::to_string(live.size()) + " tensors uncontracted", reader.line_no());
    }
    plan.tree.root = live.begin()->second;
    try {
        plan.cost = cost(net, plan.tree, plan.slices);
    } catch (const UsageError &e) {
        throw FormatError(e.what(), reader.line_no());
    }
    return plan;
}

}  // namespace rqc
