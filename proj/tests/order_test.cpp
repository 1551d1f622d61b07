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


#include "rqcsim/order.hpp"

#include <set>

#include "gtest/gtest.h"
#include "networks.hpp"

using namespace rqc;
using rqc::testing::random_network;

namespace {

TensorNetwork graph(const std::vector<std::vector<Label>> &nodes, std::vector<Label> open = {}) {
    TensorNetwork net;
    for (const auto &ls : nodes) net.add_node(ls);
    net.set_open_labels(std::move(open));
    net.validate();
    return net;
}

ContractionTree chain_tree(const TensorNetwork &net) {
    ContractionTree t;
    auto it = net.nodes().begin();
    int acc = t.add_leaf(it->first);
    for (++it; it != net.nodes().end(); ++it) acc = t.add_join(acc, t.add_leaf(it->first));
    t.root = acc;
    return t;
}

/// Tree built by repeatedly merging a uniformly random pair of roots that
/// share a label (any pair once none do).
ContractionTree random_tree(const TensorNetwork &net, CounterRng &rng) {
    ContractionTree t;
    std::vector<int> pool;
    std::vector<std::set<Label>> labels;
    for (const auto &[id, n] : net.nodes()) {
        pool.push_back(t.add_leaf(id));
        labels.emplace_back(n.labels.begin(), n.labels.end());
    }
    while (pool.size() > 1) {
        std::vector<std::pair<size_t, size_t>> adjacent;
        for (size_t i = 0; i < pool.size(); i++)
            for (size_t j = i + 1; j < pool.size(); j++)
                for (Label l : labels[i])
                    if (labels[j].count(l)) {
                        adjacent.push_back({i, j});
                        break;
                    }
        size_t i, j;
        if (adjacent.empty()) {
            i = 0;
            j = 1;
        } else {
            std::tie(i, j) = adjacent[rng.below(adjacent.size())];
        }
        std::set<Label> merged;
        for (Label l : labels[i])
            if (!labels[j].count(l)) merged.insert(l);
        for (Label l : labels[j])
            if (!labels[i].count(l)) merged.insert(l);
        int joined = t.add_join(pool[i], pool[j]);
        pool.erase(pool.begin() + j);
        labels.erase(labels.begin() + j);
        pool[i] = joined;
        labels[i] = merged;
    }
    t.root = pool[0];
    return t;
}

void expect_valid(const TensorNetwork &net, const ContractionTree &tree) {
    auto leaves = tree.leaves();
    std::multiset<size_t> got(leaves.begin(), leaves.end());
    std::multiset<size_t> want;
    for (const auto &[id, n] : net.nodes()) want.insert(id);
    EXPECT_EQ(got, want);
    EXPECT_NO_THROW(cost(net, tree, {}));
}

}  // namespace

TEST(cost, single_contraction) {
    auto net = graph({{0, 1, 2, 3}, {2, 3, 4, 5}}, {0, 1, 4, 5});
    auto c = cost(net, exhaustive_order(net), {});
    EXPECT_EQ(c.flops, 512.0);
    EXPECT_EQ(c.n_slices, 1u);
    EXPECT_EQ(c.max_intermediate_log2, 4);
}

TEST(cost, slicing_a_shared_label_keeps_total) {
    auto net = graph({{0, 1, 2, 3}, {2, 3, 4, 5}}, {0, 1, 4, 5});
    auto tree = exhaustive_order(net);
    auto whole = cost(net, tree, {});
    auto sliced = cost(net, tree, {{2}});
    EXPECT_EQ(sliced.n_slices, 2u);
    EXPECT_EQ(sliced.flops, whole.flops);
    EXPECT_EQ(sliced.flops / sliced.n_slices, whole.flops / 2);
}

TEST(cost, rejects_bad_inputs) {
    auto net = graph({{0, 1}, {1, 2}, {2, 0}});
    ContractionTree t;
    t.root = t.add_join(t.add_leaf(0), t.add_leaf(1));
    EXPECT_THROW(cost(net, t, {}), UsageError);
    auto full = chain_tree(net);
    EXPECT_THROW(cost(net, full, {{7}}), UsageError);
    auto open = graph({{0, 1}, {1}}, {0});
    EXPECT_THROW(cost(open, chain_tree(open), {{0}}), UsageError);
}

TEST(cost, json_report) {
    CostSummary c{6.92e18, uint64_t{1} << 21, 32};
    EXPECT_EQ(cost_json(c).dump(), R"({"flops":6.92e+18,"n_slices":2097152,"max_intermediate_log2":32})");
}

TEST(exhaustive, two_nodes) {
    auto net = graph({{0, 1}, {1, 2}}, {0, 2});
    auto t = exhaustive_order(net);
    EXPECT_EQ(t.nodes.size(), 3u);
    expect_valid(net, t);
}

TEST(exhaustive, three_node_chain_picks_cheaper_order) {
    // A[0,1,2,3] B[3,4] C[4,5]: (B C) first costs 8*2^3 then 8*2^5.
    auto net = graph({{0, 1, 2, 3}, {3, 4}, {4, 5}}, {0, 1, 2, 5});
    std::vector<double> costs;
    for (auto [x, y, z] : {std::array<size_t, 3>{0, 1, 2}, {1, 2, 0}, {0, 2, 1}}) {
        ContractionTree t;
        t.root = t.add_join(t.add_join(t.add_leaf(x), t.add_leaf(y)), t.add_leaf(z));
        costs.push_back(cost(net, t, {}).flops);
    }
    EXPECT_EQ(cost(net, exhaustive_order(net), {}).flops, *std::min_element(costs.begin(), costs.end()));
    EXPECT_EQ(cost(net, exhaustive_order(net), {}).flops, 8.0 * 8 + 8.0 * 32);
}

TEST(exhaustive, matches_best_random_tree_on_eight_nodes) {
    for (uint64_t seed = 0; seed < 3; seed++) {
        auto net = random_network(CounterRng(seed), 8, 3, 2, false);
        double opt = cost(net, exhaustive_order(net), {}).flops;
        CounterRng rng(100 + seed);
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 10000; i++) best = std::min(best, cost(net, random_tree(net, rng), {}).flops);
        EXPECT_LE(opt, best);
        EXPECT_GE(opt, best / 1.0001) << "random sampling found the optimum on 8 nodes";
    }
}

TEST(exhaustive, rejects_large_networks) {
    auto net = random_network(CounterRng(1), 13, 4, 0, false);
    EXPECT_THROW(exhaustive_order(net), UsageError);
}

TEST(partition, path_graph) {
    auto net = graph({{0}, {0, 1}, {1, 2}, {2, 3}, {3, 4}, {4}});
    PartitionOptions opt;
    opt.leaf_size = 2;
    auto t = partition_search(net, opt);
    expect_valid(net, t);
    EXPECT_LE(cost(net, t, {}).max_intermediate_log2, 2);
}

TEST(partition, valid_on_random_networks_and_disconnected_parts) {
    for (uint64_t seed = 0; seed < 10; seed++) {
        auto net = random_network(CounterRng(seed), 30, 5, 3, false);
        expect_valid(net, partition_search(net, {0.1, seed, 8}));
    }
    auto split = graph({{0, 1}, {0, 1}, {2}, {2}, {3, 4}, {3, 5}, {4, 5}, {6}, {6}, {7}, {7}});
    PartitionOptions opt;
    opt.leaf_size = 3;
    expect_valid(split, partition_search(split, opt));
}

TEST(partition, within_ten_times_of_optimum) {
    for (uint64_t seed = 0; seed < 20; seed++) {
        size_t m = 9 + seed % 4;
        auto net = random_network(CounterRng(seed), m, 3, 2, false);
        double opt = cost(net, exhaustive_order(net), {}).flops;
        double got = cost(net, partition_search(net, {0.1, seed, 8}), {}).flops;
        EXPECT_LE(got, 10 * opt) << "seed " << seed;
    }
}

TEST(partition, deterministic) {
    auto net = random_network(CounterRng(4), 40, 6, 2, false);
    auto a = partition_search(net, {0.1, 9, 8});
    auto b = partition_search(net, {0.1, 9, 8});
    EXPECT_EQ(serialize_plan(net, {28, a, {}, {}}), serialize_plan(net, {28, b, {}, {}}));
}

TEST(slicing, under_bound_adds_nothing) {
    auto net = random_network(CounterRng(2), 12, 4, 0, false);
    auto tree = partition_search(net);
    auto before = cost(net, tree, {});
    auto [t2, plan] = slice_and_reconfigure(net, tree, {before.max_intermediate_log2, 10});
    EXPECT_TRUE(plan.sliced.empty());
    EXPECT_LE(cost(net, t2, plan).flops, before.flops);
}

TEST(slicing, respects_bound_and_is_monotone) {
    auto net = random_network(CounterRng(8), 36, 6, 2, false);
    auto tree = partition_search(net);
    int top = cost(net, tree, {}).max_intermediate_log2;
    uint64_t prev = 1;
    for (int bound = top; bound >= 3; bound--) {
        auto [t, plan] = slice_and_reconfigure(net, tree, {bound, 10});
        auto c = cost(net, t, plan);
        EXPECT_LE(c.max_intermediate_log2, bound);
        EXPECT_GE(c.n_slices, prev) << "bound " << bound;
        prev = c.n_slices;
        for (Label l : plan.sliced) {
            EXPECT_EQ(std::count(net.open_labels().begin(), net.open_labels().end(), l), 0);
        }
    }
}

TEST(slicing, impossible_bound) {
    auto net = graph({{0, 1, 2}, {2, 3}}, {0, 1, 3});
    EXPECT_THROW(slice_and_reconfigure(net, exhaustive_order(net), {1, 10}), ResourceError);
}

TEST(find_order, single_candidate_matches_pipeline) {
    auto net = random_network(CounterRng(5), 30, 5, 1, false);
    OrderOptions opt;
    opt.n_candidates = 1;
    opt.max_size_log2 = 8;
    opt.seed = 3;
    auto plan = find_order(net, opt);
    PartitionOptions popt;
    popt.seed = CounterRng(3).at(0);
    auto [tree, slices] = slice_and_reconfigure(net, partition_search(net, popt), {8, 10});
    EXPECT_EQ(serialize_plan(net, plan), serialize_plan(net, {8, tree, slices, {}}));
}

TEST(find_order, argmin_over_candidates) {
    auto net = random_network(CounterRng(6), 30, 5, 1, false);
    OrderOptions opt;
    opt.n_candidates = 6;
    opt.max_size_log2 = 9;
    auto best = find_order(net, opt);
    for (size_t i = 0; i < opt.n_candidates; i++) {
        PartitionOptions popt;
        popt.seed = CounterRng(opt.seed).at(i);
        auto [tree, slices] = slice_and_reconfigure(net, partition_search(net, popt), {9, 10});
        EXPECT_LE(best.cost.flops, cost(net, tree, slices).flops);
    }
    EXPECT_EQ(OrderOptions{}.n_candidates, 100u);
}

TEST(find_order, benchmark_metric_selects_lowest_score) {
    auto net = random_network(CounterRng(6), 20, 5, 1, false);
    OrderOptions opt;
    opt.n_candidates = 4;
    int calls = 0;
    auto plan = find_order(net, opt, [&](const ContractionPlan &) { return calls++ == 2 ? 0.0 : 1.0; });
    EXPECT_EQ(calls, 4);
    PartitionOptions popt;
    popt.seed = CounterRng(opt.seed).at(2);
    auto [tree, slices] = slice_and_reconfigure(net, partition_search(net, popt), {28, 10});
    EXPECT_EQ(serialize_plan(net, plan), serialize_plan(net, {28, tree, slices, {}}));
}

TEST(plan_file, round_trips_byte_stable) {
    auto net = random_network(CounterRng(7), 25, 5, 2, false);
    OrderOptions opt;
    opt.n_candidates = 2;
    opt.max_size_log2 = 7;
    auto plan = find_order(net, opt);
    ASSERT_FALSE(plan.slices.sliced.empty());
    auto text = serialize_plan(net, plan);
    auto back = parse_plan(text, net);
    EXPECT_EQ(serialize_plan(net, back), text);
    EXPECT_EQ(back.cost.flops, plan.cost.flops);
    EXPECT_EQ(back.cost.n_slices, plan.cost.n_slices);
    EXPECT_EQ(text.substr(0, 10), "maxsize 7\n");
}

TEST(plan_file, single_node_network) {
    auto net = graph({{0, 1}}, {0, 1});
    auto plan = find_order(net, {28, 1, 0, 0.1, 8, 10});
    auto text = serialize_plan(net, plan);
    EXPECT_EQ(text, "maxsize 28\nslices\n");
    EXPECT_EQ(serialize_plan(net, parse_plan(text, net)), text);
}

TEST(plan_file, format_errors) {
    auto net = graph({{0, 1}, {1, 2}, {2, 0}});
    EXPECT_THROW(parse_plan("slices\n", net), FormatError);
    EXPECT_THROW(parse_plan("maxsize 9\nslices\ncontract 0 1 -> 3\n", net), FormatError);
    EXPECT_THROW(parse_plan("maxsize 9\nslices\ncontract 0 1 -> 3\ncontract 3 0 -> 4\n", net), FormatError);
    EXPECT_THROW(parse_plan("maxsize 9\nslices\ncontract 0 1 -> 2\ncontract 3 2 -> 4\n", net), FormatError);
    EXPECT_THROW(parse_plan("maxsize 9\nslices 9\ncontract 0 1 -> 3\ncontract 3 2 -> 4\n", net), FormatError);
    EXPECT_THROW(parse_plan("maxsize 9\nslices\ncontract 0 1 3\n", net), FormatError);
    EXPECT_NO_THROW(parse_plan("maxsize 9\nslices 1\ncontract 0 1 -> 3\ncontract 3 2 -> 4\n", net));
}
