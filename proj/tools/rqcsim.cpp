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

// rqcsim: random quantum circuit simulation by sliced tensor network
// contraction.
//
//   rqcsim generate  --topology grid4x4 --cycles 12 --seed 7 -o c.txt
//   rqcsim order     --circuit c.txt --maxsize 28 -o plan.txt
//   rqcsim amplitude --circuit c.txt --bitstring 0101...
//   rqcsim sample    --circuit c.txt --samples 1000 -o bits.txt
//   rqcsim xeb       --circuit c.txt --bitstrings bits.txt
//   rqcsim verify    --qubits 16 --cycles 10
//
// Exit codes: 0 ok, 2 usage, 3 format, 4 resource guard. Errors are written
// to stderr as one JSON object.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rqcsim/analysis.hpp"
#include "rqcsim/circuit.hpp"
#include "rqcsim/config.hpp"
#include "rqcsim/engine.hpp"
#include "rqcsim/network.hpp"
#include "rqcsim/order.hpp"

namespace {

using namespace rqc;

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string &path, const std::string &data) {
    if (path.empty() || path == "-") {
        std::cout << data << std::flush;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << data)) throw ResourceError("cannot write '" + path + "'");
}

std::vector<int> parse_qubit_list(const std::string &s, int n_qubits) {
    std::vector<int> out;
    for (auto part : text::split_commas(s)) {
        int q = 0;
        try {
            q = text::parse_int<int>(part, 0);
        } catch (const FormatError &) {
            throw UsageError("bad qubit list '" + s + "'");
        }
        if (q < 0 || q >= n_qubits) throw UsageError("qubit " + std::to_string(q) + " out of range");
        out.push_back(q);
    }
    return out;
}

/// Raw flag values; each is applied over the config only when given.
struct Flags {
    std::string config;
    uint64_t seed = 0;
    int max_size_log2 = 0;
    uint64_t n_candidates = 0;
    unsigned workers = 0;
    std::string precision;
    unsigned batch_log2 = 0;
    int open_count = 0;
    double ceiling = 0;
    double imbalance = 0;
    uint64_t leaf_size = 0;
    uint64_t reconfigure_size = 0;
    std::string circuit;
    std::string plan;
    std::string output;
};

class Cli {
   public:
    Cli() : app_("Random quantum circuit simulation by sliced tensor network contraction", "rqcsim") {
        app_.require_subcommand(1);
        app_.fallthrough();
        app_.set_help_all_flag("--help-all", "Expand all help");
        opt("--config", flags_.config, "key = value config file (default from $RQCSIM_CONFIG)");
        opt("--seed", flags_.seed, "seed for every random choice");
        opt("--maxsize", flags_.max_size_log2, "log2 of the largest allowed intermediate (default 28)");
        opt("--candidates", flags_.n_candidates, "contraction orders to try (default 100)");
        opt("--workers", flags_.workers, "worker threads (default 1)");
        opt("--precision", flags_.precision, "single or mixed (default single)");
        opt("--batch-log2", flags_.batch_log2, "log2 batch of the fused kernel (default 13)");
        opt("--open-count", flags_.open_count, "open qubits per amplitude batch (default 6)");
        opt("--ceiling", flags_.ceiling, "rejection envelope M for sampling (default 20)");
        opt("--imbalance", flags_.imbalance, "bisection imbalance (default 0.1)");
        opt("--leaf-size", flags_.leaf_size, "parts ordered exhaustively below this size (default 8)");
        opt("--reconfigure-size", flags_.reconfigure_size, "subtree size for reconfiguration (default 10)");
        opt("--circuit", flags_.circuit, "circuit file");
        opt("--plan", flags_.plan, "plan file");
        opt("-o,--output", flags_.output, "output file (default stdout)");

        auto *gen = app_.add_subcommand("generate", "write a random circuit");
        gen->add_option("--topology", topology_, "sycamore53, zuchongzhi56, gridWxH or a topology file")->required();
        gen->add_option("--cycles", cycles_, "number of cycles")->required()->check(CLI::NonNegativeNumber);
        gen->add_option("--fsim-table", fsim_table_, "per-coupler fSim parameters");
        gen->add_flag("--no-trailing-layer", no_trailing_, "omit the single-qubit layer after the last cycle");
        gen->callback([this] { cmd_generate(); });

        auto *ord = app_.add_subcommand("order", "find a sliced contraction plan");
        ord->add_option("--open", open_, "comma-separated open qubits");
        ord->add_option("--cost-json", cost_json_, "also write the cost report here");
        ord->add_flag("--benchmark", benchmark_, "rank candidates by the measured time of one slice");
        ord->callback([this] { cmd_order(); });

        auto *amp = app_.add_subcommand("amplitude", "compute amplitudes as JSON lines");
        amp->add_option("--bitstring", bitstrings_, "bitstring (repeatable)");
        amp->add_option("--bitstrings", bitstring_file_, "file with one bitstring per line");
        amp->add_option("--open", open_, "comma-separated open qubits; their bits are ignored");
        amp->add_flag("--progress", progress_, "report progress on stderr");
        amp->callback([this] { cmd_amplitude(); });

        auto *smp = app_.add_subcommand("sample", "frugal rejection sampling");
        smp->add_option("--samples", samples_, "number of samples")->check(CLI::PositiveNumber);
        smp->add_option("--fidelity", fidelity_, "dilute to this fidelity")->check(CLI::Range(0.0, 1.0));
        smp->add_flag("--stats", stats_, "write acceptance statistics to stderr");
        smp->callback([this] { cmd_sample(); });

        auto *xeb = app_.add_subcommand("xeb", "XEB report for a bitstring file");
        xeb->add_option("--bitstrings", bitstring_file_, "file with one bitstring per line")->required();
        xeb->add_option("--histogram", histogram_path_, "write the x = N p histogram CSV here");
        xeb->callback([this] { cmd_xeb(); });

        auto *ver = app_.add_subcommand("verify", "compare contraction against the state vector");
        ver->add_option("--qubits", qubits_, "grid qubits")->required()->check(CLI::Range(1, kStatevectorMaxQubits));
        ver->add_option("--cycles", cycles_, "number of cycles")->required()->check(CLI::NonNegativeNumber);
        ver->add_option("--count", count_, "bitstrings to compare (default 5)")->check(CLI::PositiveNumber);
        ver->callback([this] { cmd_verify(); });
    }

    int run(int argc, char **argv) {
        try {
            app_.parse(argc, argv);
        } catch (const CLI::CallForHelp &e) {
            return app_.exit(e);
        } catch (const CLI::CallForAllHelp &e) {
            return app_.exit(e);
        } catch (const CLI::ParseError &e) {
            return fail("usage", e.what(), 2);
        } catch (const Error &e) {
            return fail(e.kind_name(), e.what(), e.kind() == Error::Kind::usage ? 2
                                                 : e.kind() == Error::Kind::format ? 3
                                                                                   : 4);
        } catch (const std::bad_alloc &) {
            return fail("resource", "out of memory", 4);
        } catch (const std::exception &e) {
            return fail("internal", e.what(), 1);
        }
        return 0;
    }

   private:
    template <typename T>
    void opt(const char *name, T &target, const char *help) {
        options_.push_back(app_.add_option(name, target, help));
    }

    bool given(const char *name) const {
        return app_.get_option(name)->count() > 0;
    }

    static int fail(const char *kind, const std::string &message, int code) {
        nlohmann::ordered_json j;
        j["error"] = kind;
        j["message"] = message;
        std::cerr << j.dump() << std::endl;
        return code;
    }

    /// Defaults, then the config file, then explicit flags.
    RunConfig config() const {
        RunConfig c;
        std::string path = given("--config") ? flags_.config : config_path_from_env();
        if (!path.empty()) c = parse_config(read_file(path), c);
        if (given("--seed")) c.seed = flags_.seed;
        if (given("--maxsize")) c.max_size_log2 = flags_.max_size_log2;
        if (given("--candidates")) c.n_candidates = flags_.n_candidates;
        if (given("--workers")) c.workers = flags_.workers;
        if (given("--precision")) c.precision = precision_from(flags_.precision);
        if (given("--batch-log2")) c.batch_log2 = flags_.batch_log2;
        if (given("--open-count")) c.open_count = flags_.open_count;
        if (given("--ceiling")) c.ceiling = flags_.ceiling;
        if (given("--imbalance")) c.imbalance = flags_.imbalance;
        if (given("--leaf-size")) c.leaf_size = flags_.leaf_size;
        if (given("--reconfigure-size")) c.reconfigure_size = flags_.reconfigure_size;
        if (given("--circuit")) c.circuit_path = flags_.circuit;
        if (given("--plan")) c.plan_path = flags_.plan;
        if (given("--output")) c.output_path = flags_.output;
        c.validate();
        return c;
    }

    static Circuit load_circuit(const RunConfig &c) {
        if (c.circuit_path.empty()) throw UsageError("no circuit given (--circuit)");
        return parse_circuit(read_file(c.circuit_path));
    }

    void cmd_generate() {
        auto c = config();
        Topology topo;
        if (std::filesystem::exists(topology_)) {
            topo = parse_topology(read_file(topology_));
        } else {
            topo = builtin_topology(topology_);
        }
        GenerateOptions g;
        g.trailing_single_layer = !no_trailing_;
        if (!fsim_table_.empty()) g.per_coupler = parse_fsim_table(read_file(fsim_table_));
        write_output(c.output_path, serialize_circuit(generate_rqc(topo, cycles_, c.seed, g)));
    }

    void cmd_order() {
        auto c = config();
        auto circuit = load_circuit(c);
        auto open = parse_qubit_list(open_, circuit.n_qubits);
        std::string zeros(circuit.n_qubits - open.size(), '0');
        auto structure = simplify(circuit_to_network(circuit, zeros, open, false));
        PlanBenchmark bench;
        std::optional<TensorNetwork> data;
        if (benchmark_) {
            data = simplify(circuit_to_network(circuit, zeros, open, true));
            bench = [&](const ContractionPlan &p) {
                auto t0 = std::chrono::steady_clock::now();
                contract_slice(*data, p, 0, c.exec_options());
                return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            };
        }
        auto plan = find_order(structure, c.order_options(), bench);
        auto report = cost_json(plan.cost).dump() + "\n";
        if (!cost_json_.empty()) write_output(cost_json_, report);
        if (c.output_path.empty() || c.output_path == "-") {
            write_output("", serialize_plan(structure, plan));
            std::cerr << report;
        } else {
            write_output(c.output_path, serialize_plan(structure, plan));
            std::cout << report;
        }
    }

    void cmd_amplitude() {
        auto c = config();
        auto circuit = load_circuit(c);
        auto open = parse_qubit_list(open_, circuit.n_qubits);
        std::vector<std::string> bits = bitstrings_;
        if (!bitstring_file_.empty()) {
            auto more = parse_bitstrings(read_file(bitstring_file_), circuit.n_qubits);
            bits.insert(bits.end(), more.begin(), more.end());
        }
        if (bits.empty()) throw UsageError("no bitstrings given (--bitstring or --bitstrings)");
        auto eo = c.engine_options();
        eo.open_cap = std::max(eo.open_cap, open.size());
        if (progress_) eo.exec.progress = &std::cerr;
        AmplitudeEngine engine(circuit, open, eo);
        if (!c.plan_path.empty()) engine.set_plan(parse_plan(read_file(c.plan_path), engine.structure()));
        std::vector<bool> is_open(circuit.n_qubits, false);
        for (int q : open) is_open[q] = true;
        std::vector<AmplitudeRecord> records;
        for (const auto &b : bits) {
            if (b.size() != static_cast<size_t>(circuit.n_qubits) || b.find_first_not_of("01") != std::string::npos) {
                throw UsageError("bitstring '" + b + "' is not " + std::to_string(circuit.n_qubits) + " binary digits");
            }
            std::string fixed;
            for (int q = 0; q < circuit.n_qubits; q++) {
                if (!is_open[q]) fixed += b[q];
            }
            auto batch = engine.batch(fixed);
            for (size_t j = 0; j < batch.amplitudes.size(); j++) {
                records.push_back({batch.bitstring(j, circuit.n_qubits), batch.amplitudes[j]});
            }
        }
        write_output(c.output_path, serialize_amplitudes(records));
    }

    void cmd_sample() {
        auto c = config();
        auto circuit = load_circuit(c);
        int k = std::min(c.open_count, circuit.n_qubits);
        std::optional<ContractionPlan> plan;
        auto eo = c.engine_options();
        if (!c.plan_path.empty()) {
            AmplitudeEngine probe(circuit, last_qubits(circuit.n_qubits, k), eo);
            plan = parse_plan(read_file(c.plan_path), probe.structure());
        }
        FrugalOptions fo;
        fo.n_samples = samples_;
        fo.open_count = k;
        fo.ceiling = c.ceiling;
        fo.seed = CounterRng(c.seed).at(0);
        auto result = frugal_sample(circuit.n_qubits, engine_provider(circuit, k, eo, plan), fo);
        auto out = result.bitstrings;
        if (fidelity_ < 1) out = dilute_to_fidelity(out, fidelity_, circuit.n_qubits, CounterRng(c.seed).at(1));
        write_output(c.output_path, serialize_bitstrings(out));
        if (stats_) {
            nlohmann::ordered_json j;
            j["samples"] = out.size();
            j["batches"] = result.batches;
            j["proposals"] = result.proposals;
            j["acceptance_rate"] = result.acceptance_rate();
            std::cerr << j.dump() << std::endl;
        }
    }

    void cmd_xeb() {
        auto c = config();
        auto circuit = load_circuit(c);
        int k = std::min(c.open_count, circuit.n_qubits);
        auto bits = parse_bitstrings(read_file(bitstring_file_), circuit.n_qubits);
        if (bits.empty()) throw UsageError("bitstring file is empty");
        auto eo = c.engine_options();
        std::optional<ContractionPlan> plan;
        if (!c.plan_path.empty()) {
            AmplitudeEngine probe(circuit, last_qubits(circuit.n_qubits, k), eo);
            plan = parse_plan(read_file(c.plan_path), probe.structure());
        }
        auto r = verify_bitstrings(circuit, bits, k, eo, plan);
        if (!histogram_path_.empty()) write_output(histogram_path_, histogram_csv(r.report.histogram));
        write_output(c.output_path, r.report.to_json().dump(2) + "\n");
    }

    void cmd_verify() {
        auto c = config();
        int w = 1;
        for (int d = 1; d * d <= qubits_; d++) {
            if (qubits_ % d == 0) w = d;
        }
        auto circuit = generate_rqc(grid_topology(qubits_ / w, w), cycles_, c.seed);
        auto psi = statevector_simulate(circuit);
        auto eo = c.engine_options();
        AmplitudeEngine engine(circuit, {}, eo);
        CounterRng rng = CounterRng(c.seed).split(7);
        std::vector<VerifyRow> rows;
        // Bitstrings are drawn from |psi|^2, as sampled bitstrings would be.
        // Per-amplitude relative error grows as 1/sqrt(N p) in single
        // precision, so uniform draws would mostly probe conditioning.
        std::vector<double> cdf(psi.size());
        double run = 0;
        for (size_t i = 0; i < psi.size(); i++) cdf[i] = run += std::norm(psi[i]);
        for (int i = 0; i < count_; i++) {
            double u = rng.uniform01() * run;
            auto idx = std::min<size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), psi.size() - 1);
            auto bits = index_bitstring(idx, circuit.n_qubits);
            rows.push_back({bits, engine.amplitude(bits), psi[idx]});
        }
        write_output(c.output_path, render_verify_table(rows));
    }

    static std::vector<int> last_qubits(int n, int k) {
        std::vector<int> out;
        for (int q = n - k; q < n; q++) out.push_back(q);
        return out;
    }

    CLI::App app_;
    Flags flags_;
    std::vector<CLI::Option *> options_;

    std::string topology_;
    int cycles_ = 0;
    std::string fsim_table_;
    bool no_trailing_ = false;
    std::string open_;
    std::string cost_json_;
    bool benchmark_ = false;
    std::vector<std::string> bitstrings_;
    std::string bitstring_file_;
    bool progress_ = false;
    uint64_t samples_ = 1000;
    double fidelity_ = 1.0;
    bool stats_ = false;
    std::string histogram_path_;
    int qubits_ = 0;
    int count_ = 5;
};

}  // namespace

int main(int argc, char **argv) {
    Cli cli;
    return cli.run(argc, argv);
}
