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


// Drives the rqcsim executable end to end through files.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("rqcsim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override {
        fs::remove_all(dir_);
    }

    std::string path(const std::string &name) const {
        return (dir_ / name).string();
    }

    RunResult invoke(const std::string &args, const std::string &env = "") const {
        auto out = path("stdout"), err = path("stderr");
        std::string cmd = "cd '" + dir_.string() + "' && env -u RQCSIM_CONFIG " + env + " '" RQCSIM_CLI "' " + args +
                          " > '" + out + "' 2> '" + err + "'";
        int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    fs::path dir_;
};

TEST_F(CliTest, GenerateIsByteIdentical) {
    ASSERT_EQ(invoke("generate --topology grid4x4 --cycles 12 --seed 7 -o a.txt").code, 0);
    ASSERT_EQ(invoke("generate --topology grid4x4 --cycles 12 --seed 7 -o b.txt").code, 0);
    auto a = slurp(path("a.txt"));
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(path("b.txt")));
    ASSERT_EQ(invoke("generate --topology grid4x4 --cycles 12 --seed 8 -o c.txt").code, 0);
    EXPECT_NE(a, slurp(path("c.txt")));
}

TEST_F(CliTest, VerifyReportsSmallError) {
    auto r = invoke("verify --qubits 16 --cycles 10");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("relative_error"), std::string::npos);
    auto at = r.out.rfind("max relative error ");
    ASSERT_NE(at, std::string::npos);
    double worst = std::stod(r.out.substr(at + 19));
    EXPECT_LE(worst, 1e-5);
}

TEST_F(CliTest, OrderCostHasPowerOfTwoSlices) {
    ASSERT_EQ(invoke("generate --topology grid4x4 --cycles 12 --seed 7 -o c.txt").code, 0);
    for (int maxsize : {28, 8}) {
        auto r = invoke("order --circuit c.txt --maxsize " + std::to_string(maxsize) + " --candidates 100 -o plan.txt");
        ASSERT_EQ(r.code, 0) << r.err;
        auto cost = nlohmann::json::parse(r.out);
        auto n = cost["n_slices"].get<uint64_t>();
        EXPECT_GE(n, 1u);
        EXPECT_EQ(n & (n - 1), 0u) << n;
        EXPECT_LE(cost["max_intermediate_log2"].get<int>(), maxsize);
        if (maxsize == 8) {
            EXPECT_GT(n, 1u);
        }
    }
}

TEST_F(CliTest, PipelineThroughFiles) {
    ASSERT_EQ(invoke("generate --topology grid3x3 --cycles 8 --seed 2 -o c.txt").code, 0);
    ASSERT_EQ(invoke("order --circuit c.txt --maxsize 6 --candidates 8 -o plan.txt --cost-json cost.json").code, 0);
    EXPECT_TRUE(nlohmann::json::parse(slurp(path("cost.json"))).contains("flops"));
    auto with_plan = invoke("amplitude --circuit c.txt --plan plan.txt --bitstring 010011010 --workers 1");
    ASSERT_EQ(with_plan.code, 0) << with_plan.err;
    auto parallel = invoke("amplitude --circuit c.txt --plan plan.txt --bitstring 010011010 --workers 3");
    EXPECT_EQ(with_plan.out, parallel.out);
    auto j = nlohmann::json::parse(with_plan.out);
    EXPECT_EQ(j["bitstring"], "010011010");

    auto s = invoke("sample --circuit c.txt --samples 300 --seed 4 --stats -o bits.txt");
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(nlohmann::json::parse(s.err).contains("acceptance_rate"));
    auto again = invoke("sample --circuit c.txt --samples 300 --seed 4 -o bits2.txt");
    ASSERT_EQ(again.code, 0);
    EXPECT_EQ(slurp(path("bits.txt")), slurp(path("bits2.txt")));

    auto x = invoke("xeb --circuit c.txt --bitstrings bits.txt --histogram h.csv -o report.json");
    ASSERT_EQ(x.code, 0) << x.err;
    auto report = nlohmann::json::parse(slurp(path("report.json")));
    EXPECT_EQ(report["n_samples"], 300);
    EXPECT_GT(report["fidelity"].get<double>(), 0.5);
    EXPECT_EQ(slurp(path("h.csv")).rfind("bin_left,bin_right,count,model_density\n", 0), 0u);
}

TEST_F(CliTest, OpenQubitsExpandBatch) {
    ASSERT_EQ(invoke("generate --topology grid3x2 --cycles 5 --seed 1 -o c.txt").code, 0);
    auto r = invoke("amplitude --circuit c.txt --open 0,5 --bitstring 000000");
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) n++;
    EXPECT_EQ(n, 4);
}

TEST_F(CliTest, FlagsOverrideConfigOverridesDefaults) {
    ASSERT_EQ(invoke("generate --topology grid3x3 --cycles 4 --seed 11 -o want.txt").code, 0);
    ASSERT_EQ(invoke("generate --topology grid3x3 --cycles 4 --seed 12 -o other.txt").code, 0);
    std::ofstream(path("run.cfg")) << "seed = 11\noutput = from_cfg.txt\n";
    ASSERT_EQ(invoke("--config run.cfg generate --topology grid3x3 --cycles 4").code, 0);
    EXPECT_EQ(slurp(path("from_cfg.txt")), slurp(path("want.txt")));
    ASSERT_EQ(invoke("generate --topology grid3x3 --cycles 4", "RQCSIM_CONFIG=run.cfg").code, 0);
    EXPECT_EQ(slurp(path("from_cfg.txt")), slurp(path("want.txt")));
    ASSERT_EQ(invoke("--config run.cfg generate --topology grid3x3 --cycles 4 --seed 12 -o flag.txt").code, 0);
    EXPECT_EQ(slurp(path("flag.txt")), slurp(path("other.txt")));
}

TEST_F(CliTest, ErrorsAreJsonWithExitCodes) {
    auto usage = invoke("generate --cycles 3");
    EXPECT_EQ(usage.code, 2);
    EXPECT_EQ(nlohmann::json::parse(usage.err)["error"], "usage");

    EXPECT_EQ(invoke("amplitude --circuit missing.txt --bitstring 0").code, 2);
    EXPECT_EQ(invoke("--workers 0 generate --topology grid2x2 --cycles 1").code, 2);

    std::ofstream(path("bad.txt")) << "not a circuit\n";
    auto format = invoke("amplitude --circuit bad.txt --bitstring 0");
    EXPECT_EQ(format.code, 3);
    auto j = nlohmann::json::parse(format.err);
    EXPECT_EQ(j["error"], "format");
    EXPECT_FALSE(j["message"].get<std::string>().empty());

    std::ofstream(path("bad.cfg")) << "colour = blue\n";
    EXPECT_EQ(invoke("--config bad.cfg generate --topology grid2x2 --cycles 1").code, 3);

    ASSERT_EQ(invoke("generate --topology grid2x2 --cycles 2 -o c.txt").code, 0);
    auto resource = invoke("order --circuit c.txt --open 0,1,2,3 --maxsize 2 --candidates 2");
    EXPECT_EQ(resource.code, 4);
    EXPECT_EQ(nlohmann::json::parse(resource.err)["error"], "resource");
}

}  // namespace
