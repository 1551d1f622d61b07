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

#include "rqcsim/circuit.hpp"

#include <set>

#include "gtest/gtest.h"

using namespace rqc;

namespace {

const double kHalfRoot2 = std::sqrt(2.0) / 2;

void expect_matrix_near(const GateMatrix &g, const std::vector<cdouble> &want, double tol = 1e-12) {
    ASSERT_EQ(g.entries.size(), want.size());
    for (size_t i = 0; i < want.size(); i++) {
        EXPECT_NEAR(std::abs(g.entries[i] - want[i]), 0.0, tol) << "entry " << i;
    }
}

}  // namespace

TEST(gates, sqrt_x_matches_definition) {
    const cdouble i{0, 1};
    expect_matrix_near(single_qubit_gate(SingleQubitKind::sqrt_x),
                       {kHalfRoot2, -i * kHalfRoot2, -i * kHalfRoot2, kHalfRoot2});
}

TEST(gates, sqrt_y_matches_definition) {
    expect_matrix_near(single_qubit_gate(SingleQubitKind::sqrt_y), {kHalfRoot2, -kHalfRoot2, kHalfRoot2, kHalfRoot2});
}

TEST(gates, sqrt_w_matches_definition) {
    const cdouble i{0, 1};
    expect_matrix_near(single_qubit_gate(SingleQubitKind::sqrt_w),
                       {kHalfRoot2, kHalfRoot2 * (-kHalfRoot2 * (1.0 + i)), kHalfRoot2 * (kHalfRoot2 * (1.0 - i)),
                        kHalfRoot2});
}

TEST(gates, single_qubit_gates_are_unitary) {
    for (auto kind : kSingleQubitKinds) {
        EXPECT_TRUE(single_qubit_gate(kind).is_unitary(1e-12));
    }
}

TEST(gates, fsim_zero_is_identity) {
    auto g = fsim(0, 0, 0, 0, 0);
    std::vector<cdouble> id(16, 0.0);
    for (int k = 0; k < 4; k++) id[k * 5] = 1.0;
    expect_matrix_near(g, id);
}

TEST(gates, fsim_half_pi_is_iswap_like) {
    const cdouble i{0, 1};
    auto g = fsim(std::numbers::pi / 2, 0, 0, 0, 0);
    std::vector<cdouble> want(16, 0.0);
    want[0] = 1.0;
    want[1 * 4 + 2] = -i;
    want[2 * 4 + 1] = -i;
    want[15] = 1.0;
    expect_matrix_near(g, want);
}

TEST(gates, fsim_random_parameters_unitary) {
    CounterRng rng(11);
    for (int trial = 0; trial < 200; trial++) {
        FsimParams p{rng.uniform01() * 7 - 3.5, rng.uniform01() * 7 - 3.5, rng.uniform01() * 7 - 3.5,
                     rng.uniform01() * 7 - 3.5, rng.uniform01() * 7 - 3.5};
        auto g = fsim(p);
        // Independent check: explicit U * U^dagger product.
        for (int r = 0; r < 4; r++) {
            for (int c = 0; c < 4; c++) {
                cdouble acc = 0;
                for (int k = 0; k < 4; k++) acc += g.entries[r * 4 + k] * std::conj(g.entries[c * 4 + k]);
                EXPECT_NEAR(std::abs(acc - (r == c ? 1.0 : 0.0)), 0.0, 1e-6);
            }
        }
    }
}

TEST(topology, grid_2x2) {
    auto t = builtin_topology("grid(2x2)");
    EXPECT_EQ(t.enabled_qubit_count(), 4u);
    EXPECT_EQ(t.couplers.size(), 4u);
    std::set<char> labels;
    for (const auto &c : t.couplers) labels.insert(letter_of(c.label));
    EXPECT_EQ(labels, (std::set<char>{'A', 'C'}));
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(builtin_topology("grid2x2"), t);
}

TEST(topology, device_assets) {
    auto syc = builtin_topology("sycamore53");
    EXPECT_EQ(syc.enabled_qubit_count(), 53u);
    EXPECT_EQ(syc.qubits.size(), 54u);
    EXPECT_NO_THROW(syc.validate());
    auto zcz = builtin_topology("zuchongzhi56");
    EXPECT_EQ(zcz.enabled_qubit_count(), 56u);
    EXPECT_NO_THROW(zcz.validate());
    for (const auto &c : syc.couplers) {
        if (!c.enabled) continue;
        auto ids = syc.enabled_ids();
        EXPECT_NE(std::find(ids.begin(), ids.end(), c.q1), ids.end());
        EXPECT_NE(std::find(ids.begin(), ids.end(), c.q2), ids.end());
    }
}

TEST(topology, unknown_name) {
    EXPECT_THROW(builtin_topology("tokyo20"), UsageError);
    EXPECT_THROW(builtin_topology("grid(0x3)"), UsageError);
    EXPECT_THROW(builtin_topology("grid(3x"), UsageError);
}

TEST(topology, rejects_overlapping_pattern) {
    Topology t = grid_topology(3, 1);
    t.couplers[1].label = t.couplers[0].label;
    EXPECT_THROW(t.validate(), UsageError);
}

TEST(topology, rejects_coupler_on_disabled_qubit) {
    Topology t = grid_topology(2, 2);
    t.qubits[0].enabled = false;
    EXPECT_THROW(t.validate(), UsageError);
}

TEST(topology, file_round_trip) {
    auto t = builtin_topology("sycamore53");
    auto text = serialize_topology(t);
    auto back = parse_topology(text);
    EXPECT_EQ(back, t);
    EXPECT_EQ(serialize_topology(back), text);
}

TEST(topology, file_errors) {
    EXPECT_THROW(parse_topology("qubit 0 0 0 on\nqubit 1 1 0 on\ncoupler 0 1 E on\n"), FormatError);
    EXPECT_THROW(parse_topology("qubit 0 0 0 maybe\n"), FormatError);
    EXPECT_THROW(parse_topology("qubit 0 0 0 on\ncoupler 0 7 A on\n"), FormatError);
}

TEST(generate, eight_cycle_labels) {
    auto c = generate_rqc(grid_topology(3, 3), 8, 5);
    auto labels = c.two_qubit_labels();
    std::string s;
    for (auto l : labels) s += letter_of(l);
    EXPECT_EQ(s, "ABCDCDAB");
}

TEST(generate, twelve_cycle_labels) {
    auto c = generate_rqc(builtin_topology("sycamore53"), 12, 99);
    std::string s;
    for (auto l : c.two_qubit_labels()) s += letter_of(l);
    EXPECT_EQ(s, "ABCDCDABABCD");
}

TEST(generate, truncated_sequence) {
    std::string s;
    for (auto l : pattern_sequence(5)) s += letter_of(l);
    EXPECT_EQ(s, "ABCDC");
}

TEST(generate, deterministic) {
    auto topo = grid_topology(4, 3);
    EXPECT_EQ(generate_rqc(topo, 10, 1234), generate_rqc(topo, 10, 1234));
    EXPECT_NE(generate_rqc(topo, 10, 1234), generate_rqc(topo, 10, 1235));
}

TEST(generate, layer_structure) {
    auto c = generate_rqc(grid_topology(3, 4), 6, 3);
    ASSERT_EQ(c.layers.size(), 13u);
    for (size_t i = 0; i < c.layers.size(); i++) {
        EXPECT_EQ(c.layers[i].two_qubit, i % 2 == 1);
        if (!c.layers[i].two_qubit) {
            EXPECT_EQ(c.layers[i].singles.size(), 12u);
        }
    }
    EXPECT_NO_THROW(c.validate());
    GenerateOptions no_tail;
    no_tail.trailing_single_layer = false;
    EXPECT_EQ(generate_rqc(grid_topology(3, 4), 6, 3, no_tail).layers.size(), 12u);
}

TEST(generate, each_coupler_once_per_four_cycles) {
    for (auto [w, h] : {std::pair{3, 3}, {4, 5}, {6, 2}}) {
        auto topo = grid_topology(w, h);
        auto c = generate_rqc(topo, 16, 8);
        std::vector<const Layer *> tq;
        for (const auto &l : c.layers) {
            if (l.two_qubit) tq.push_back(&l);
        }
        for (size_t start = 0; start + 4 <= tq.size(); start += 4) {
            std::map<std::pair<int, int>, int> hits;
            for (size_t k = start; k < start + 4; k++) {
                for (const auto &g : tq[k]->pairs) hits[ordered_pair(g.q1, g.q2)]++;
            }
            EXPECT_EQ(hits.size(), topo.couplers.size());
            for (auto &[pair, n] : hits) EXPECT_EQ(n, 1);
        }
    }
}

TEST(generate, gate_kinds_roughly_uniform) {
    auto c = generate_rqc(grid_topology(10, 10), 20, 77);
    std::map<SingleQubitKind, int> counts;
    int total = 0;
    for (const auto &l : c.layers) {
        for (const auto &g : l.singles) {
            counts[g.kind]++;
            total++;
        }
    }
    for (auto kind : kSingleQubitKinds) {
        EXPECT_NEAR(counts[kind] / double(total), 1.0 / 3, 0.03);
    }
}

TEST(generate, per_coupler_parameters) {
    auto topo = grid_topology(2, 2);
    GenerateOptions opt;
    opt.per_coupler[{0, 1}] = FsimParams{0.1, 0.2, 0.3, 0.4, 0.5};
    auto c = generate_rqc(topo, 4, 1, opt);
    bool found = false;
    for (const auto &l : c.layers) {
        for (const auto &g : l.pairs) {
            if (ordered_pair(g.q1, g.q2) == std::pair<int, int>(0, 1)) {
                EXPECT_EQ(g.params, (opt.per_coupler[{0, 1}]));
                found = true;
            } else {
                EXPECT_EQ(g.params, FsimParams{});
            }
        }
    }
    EXPECT_TRUE(found);
}

TEST(generate, errors) {
    EXPECT_THROW(generate_rqc(grid_topology(2, 2), 0, 1), UsageError);
    EXPECT_THROW(generate_rqc(Topology{}, 4, 1), UsageError);
}

TEST(circuit_file, round_trip) {
    auto c = generate_rqc(grid_topology(4, 3), 12, 42);
    auto text = serialize_circuit(c);
    auto back = parse_circuit(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(serialize_circuit(back), text);
}

TEST(circuit_file, round_trip_preserves_exact_parameters) {
    GenerateOptions opt;
    opt.default_params = FsimParams{1.5707963267948966, 0.52359877559829882, 1e-17, -0.3333333333333333, 2.0 / 3};
    auto c = generate_rqc(grid_topology(2, 3), 5, 0, opt);
    EXPECT_EQ(parse_circuit(serialize_circuit(c)), c);
}

TEST(circuit_file, two_gates_on_one_qubit_in_a_layer) {
    std::string text =
        "qubits 3 cycles 1 seed 0\n"
        "layer sq\n"
        "q0 X2\n"
        "layer tq A\n"
        "q0 q1 fsim 1 0 0 0 0\n"
        "q1 q2 fsim 1 0 0 0 0\n";
    EXPECT_THROW(parse_circuit(text), FormatError);
}

TEST(circuit_file, unknown_gate_reports_line) {
    std::string text =
        "# comment line\n"
        "qubits 2 cycles 0 seed 0\n"
        "layer sq\n"
        "q0 X2\n"
        "q1 H\n";
    try {
        parse_circuit(text);
        FAIL() << "expected a parse error";
    } catch (const FormatError &e) {
        EXPECT_EQ(e.line, 5u);
        EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos);
    }
}

TEST(circuit_file, label_sequence_violation) {
    std::string text =
        "qubits 2 cycles 2 seed 0\n"
        "layer tq A\n"
        "q0 q1 fsim 1 0 0 0 0\n"
        "layer tq C\n";
    EXPECT_THROW(parse_circuit(text), FormatError);
}

TEST(circuit_file, cycle_count_mismatch) {
    EXPECT_THROW(parse_circuit("qubits 2 cycles 1 seed 0\nlayer sq\nq0 X2\n"), FormatError);
}

TEST(circuit_file, non_finite_parameter) {
    EXPECT_THROW(parse_circuit("qubits 2 cycles 1 seed 0\nlayer tq A\nq0 q1 fsim nan 0 0 0 0\n"), FormatError);
}

TEST(circuit_file, malformed_lines) {
    EXPECT_THROW(parse_circuit(""), FormatError);
    EXPECT_THROW(parse_circuit("qubits 2 cycles 0\n"), FormatError);
    EXPECT_THROW(parse_circuit("qubits 2 cycles 0 seed 0\nq0 X2\n"), FormatError);
    EXPECT_THROW(parse_circuit("qubits 2 cycles 0 seed 0\nlayer sq\nq5 X2\n"), FormatError);
    EXPECT_THROW(parse_circuit("qubits 2 cycles 0 seed 0\nlayer xx\n"), FormatError);
}

TEST(rng, counter_access_matches_sequential) {
    CounterRng a(5);
    CounterRng b(5);
    for (uint64_t i = 0; i < 10; i++) EXPECT_EQ(a(), b.at(i));
    EXPECT_NE(CounterRng(5).split(1)(), CounterRng(5).split(2)());
    EXPECT_EQ(CounterRng(5).split(1, 2)(), CounterRng(5).split(1).split(2)());
}
