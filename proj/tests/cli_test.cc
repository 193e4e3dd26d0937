// SPDX-License-Identifier: Apache-2.0
//
// Runs the hetserve binary as a subprocess.

#include <gtest/gtest.h>

#include <json.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "hetserve/cluster_spec.h"
#include "hetserve/io.h"
#include "hetserve/latency_model.h"
#include "hetserve/trace.h"
#include "support/oracles.h"
#include "support/synthetic.h"

namespace hetserve {
namespace {

using json = nlohmann::json;
using testing::rel_err;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(HETSERVE_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class CliTest : public ::testing::Test {
 protected:
  testing::TempDir dir{"cli"};
  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write_two_tier_scenario() {
    write_file(dir / "cluster.json", serialize_cluster_spec(testing::two_tier_cluster()));
    write_file(dir / "params.jsonl", serialize_params(testing::two_tier_params()));
    write_file(dir / "trace.jsonl", serialize_trace(testing::two_tier_trace(200, 5)));
    write_file(dir / "scenario.json", R"({
      "cluster_spec": "cluster.json", "params": "params.jsonl", "trace": "trace.jsonl",
      "deployment": [{"machine": "strong", "tp_degree": 4}, {"machine": "weak", "tp_degree": 1}],
      "arrival": {"rate": 8},
      "policy": {"policy": "OS", "theta": 2, "predictor": {"mode": "normal"}},
      "mode": "continuous", "seed": 42})");
  }
};

TEST_F(CliTest, GenTraceIsReproducible) {
  const std::string args =
      "gen-trace --count 500 --input-dist lognormal:250,300 --output-dist uniform:1,400 --seed 3";
  const CliRun a = run(args);
  const CliRun b = run(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(parse_trace(a.out).size(), 500u);
  EXPECT_NE(run(args + "0").out, a.out);

  ASSERT_EQ(run(args + " --out " + path("t.jsonl")).code, 0);
  EXPECT_EQ(read_file(dir / "t.jsonl"), a.out);

  const CliRun empty = run("gen-trace --count 0 --input-dist uniform:1,2 --output-dist uniform:1,2");
  EXPECT_EQ(empty.code, 0);
  EXPECT_TRUE(empty.out.empty());
}

TEST_F(CliTest, GenTraceRejectsBadDistributions) {
  EXPECT_EQ(run("gen-trace --count 5 --input-dist gamma:1,2 --output-dist uniform:1,2").code, 2);
  EXPECT_EQ(run("gen-trace --count 5 --input-dist uniform:9,2 --output-dist uniform:1,2").code, 2);
  EXPECT_EQ(run("gen-trace --count 5 --bogus").code, 2);
}

TEST_F(CliTest, FitRecoversParams) {
  const auto truth = testing::fit_truth_params();
  std::vector<SampleGroup> groups(1);
  groups[0].machine_name = "v100x8";
  groups[0].tp_degree = 2;
  std::int64_t o = 16;
  for (std::int64_t b : {1, 2, 4, 8}) {
    for (std::int64_t i : {64, 128, 256, 512}) {
      o = o * 7 % 251 + 5;
      groups[0].prefill.push_back({Phase::kPrefill, b, i, o, testing::prefill_direct(truth, b, i)});
      groups[0].decode.push_back({Phase::kDecode, b, i, o, testing::decode_loop(truth, b, i, o)});
    }
  }
  write_file(dir / "samples.jsonl", serialize_samples(groups));
  const CliRun r = run("fit --samples " + path("samples.jsonl") + " --out " + path("params.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("v100x8"), std::string::npos);
  const ParamsTable table = load_params(dir / "params.jsonl");
  const LatencyParams& got = table.at("v100x8", 2);
  for (int k = 0; k < 8; ++k) EXPECT_LT(rel_err(got.coef[k], truth.coef[k]), 1e-6) << k;

  for (auto& s : groups[0].prefill) s.batch_size = 1;
  write_file(dir / "deficient.jsonl", serialize_samples(groups));
  EXPECT_EQ(run("fit --samples " + path("deficient.jsonl") + " --out " + path("x.jsonl")).code, 2);
  EXPECT_EQ(run("fit --samples " + path("missing.jsonl") + " --out " + path("x.jsonl")).code, 1);
  EXPECT_EQ(run("fit --samples " + path("samples.jsonl")).code, 2);
}

TEST_F(CliTest, PlanRanksAndReportsInfeasibility) {
  write_file(dir / "cluster.json", serialize_cluster_spec(testing::ranking_machine()));
  write_file(dir / "params.jsonl", serialize_params(testing::ranking_params_table()));
  write_file(dir / "trace.jsonl", serialize_trace(testing::ranking_trace(200, 42)));
  const std::string base = "plan --spec " + path("cluster.json") + " --trace " +
                           path("trace.jsonl") + " --params " + path("params.jsonl");
  const CliRun r = run(base + " --out " + path("plan.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.substr(0, r.out.find('\n')).find("t=2"), std::string::npos) << r.out;
  const std::string report = read_file(dir / "plan.jsonl");
  EXPECT_EQ(line_count(report), 4u);
  const json first = json::parse(report.substr(0, report.find('\n')));
  EXPECT_EQ(first.at("machines").at(0).at("tp_degree").get<int>(), 2);
  EXPECT_EQ(run(base).out, r.out);

  ClusterSpec tiny = testing::ranking_machine();
  tiny.machines[0].accelerator_mem = 1'000'000'000;
  write_file(dir / "tiny.json", serialize_cluster_spec(tiny));
  EXPECT_EQ(run("plan --spec " + path("tiny.json") + " --trace " + path("trace.jsonl") +
                " --params " + path("params.jsonl"))
                .code,
            3);
  write_file(dir / "empty.jsonl", "");
  EXPECT_EQ(run("plan --spec " + path("cluster.json") + " --trace " + path("empty.jsonl") +
                " --params " + path("params.jsonl"))
                .code,
            2);
}

TEST_F(CliTest, SimulateIsByteStable) {
  write_two_tier_scenario();
  const std::string base = "simulate --scenario " + path("scenario.json");
  ASSERT_EQ(run(base + " --out " + path("a.jsonl")).code, 0);
  ASSERT_EQ(run(base + " --out " + path("b.jsonl")).code, 0);
  const std::string a = read_file(dir / "a.jsonl");
  EXPECT_EQ(a, read_file(dir / "b.jsonl"));
  EXPECT_EQ(line_count(a), 1u);
  EXPECT_EQ(json::parse(a).at("policy").get<std::string>(), "OS");

  ASSERT_EQ(run(base + " --seed 7 --out " + path("c.jsonl")).code, 0);
  EXPECT_NE(read_file(dir / "c.jsonl"), a);
  ASSERT_EQ(run(base + " --policy RR --rate inf --rate 4 --out " + path("d.jsonl")).code, 0);
  const std::string d = read_file(dir / "d.jsonl");
  EXPECT_EQ(line_count(d), 2u);
  EXPECT_EQ(json::parse(d.substr(0, d.find('\n'))).at("policy").get<std::string>(), "RR");

  EXPECT_EQ(run(base + " --policy FASTEST").code, 2);
  EXPECT_EQ(run(base + " --rate -1").code, 2);
  EXPECT_EQ(run(base + " --mode static").code, 2);  // static needs rate inf
  EXPECT_EQ(run(base + " --mode static --rate inf").code, 0);
  EXPECT_EQ(run("simulate --scenario " + path("nope.json")).code, 1);
}

TEST_F(CliTest, ComparePolicies) {
  write_two_tier_scenario();
  const std::string base = "compare --scenario " + path("scenario.json");
  ASSERT_EQ(run(base + " --out " + path("all.jsonl")).code, 0);
  const std::string all = read_file(dir / "all.jsonl");
  EXPECT_EQ(line_count(all), 5u);
  std::istringstream lines(all);
  std::vector<std::string> names;
  for (std::string line; std::getline(lines, line);) {
    names.push_back(json::parse(line).at("policy").get<std::string>());
  }
  EXPECT_EQ(names, (std::vector<std::string>{"RR", "SI", "MB", "OS", "WRR"}));

  ASSERT_EQ(run(base + " --policy OS,RR --rate 8 --rate inf --out " + path("two.jsonl")).code, 0);
  EXPECT_EQ(line_count(read_file(dir / "two.jsonl")), 4u);
  EXPECT_EQ(run(base + " --policy OS,RR --rate 8 --out " + path("again.jsonl")).code, 0);
  // The rate-8 OS record does not depend on which other policies ran.
  const std::string two = read_file(dir / "two.jsonl");
  const std::string again = read_file(dir / "again.jsonl");
  EXPECT_EQ(two.substr(0, two.find('\n')), again.substr(0, again.find('\n')));
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("nonsense").code, 2);
  EXPECT_EQ(run("plan --spec x").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("serve --config " + path("missing.json")).code, 1);
}

}  // namespace
}  // namespace hetserve
