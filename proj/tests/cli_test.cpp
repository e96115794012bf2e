#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dyntree/cli.hpp"
#include "support.hpp"

using namespace dyntree;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dyntree");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::path(DYNTREE_TEST_TMP) / ::testing::UnitTest::GetInstance()->current_test_info()->name();
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // 2x2 grid with two-entry menus, uniform or diagonal tables.
  std::string small_model(const std::string& name, const CptSpec& cpts,
                          const ParentPriorSpec& parents = ParentPriorSpec::above_and_right()) {
    const auto model = build_layered_model({2, 2, 2}, 2, parents, cpts, RootPriorSpec{});
    write_text_file(path(name), save_model(model));
    return path(name);
  }
  std::string evidence(const std::string& name, std::vector<int> states) {
    write_text_file(path(name), save_evidence(Evidence{std::move(states)}));
    return path(name);
  }

  std::filesystem::path dir_;
};

}  // namespace

TEST_F(Cli, InferSviPrintsTrace) {
  const auto m = small_model("m.json", CptSpec::diag(0.8));
  const auto e = evidence("e.json", {0, 1});
  const CliResult r = cli({"infer", "--model", m, "--evidence", e});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("free_energy_trace"), std::string::npos);
  const Json j = parse_json(r.out, "output");
  EXPECT_EQ(j["config"]["seed"], 0);
  EXPECT_EQ(j["config"]["method"], "svi");
}

TEST_F(Cli, InferAllMethods) {
  const auto m = small_model("m.json", CptSpec::diag(0.8));
  const auto e = evidence("e.json", {1, 1});
  for (const std::string method : {"svi", "mf", "loopy", "oracle"}) {
    const CliResult r = cli({"infer", "--model", m, "--evidence", e, "--method", method, "--out", path(method + ".json")});
    ASSERT_EQ(r.code, 0) << method << ": " << r.err;
    const Json j = parse_json(read_text_file(path(method + ".json")), "output");
    EXPECT_EQ(j["marginals"].size(), 6u);
  }
}

TEST_F(Cli, InputErrorsExitTwo) {
  const auto m = small_model("m.json", CptSpec::diag(0.8));
  EXPECT_EQ(cli({"infer", "--model", m, "--evidence", path("missing.json")}).code, 2);
  const auto bad = evidence("bad.json", {0});
  const CliResult r = cli({"infer", "--model", m, "--evidence", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(cli({"infer", "--model", m, "--evidence", bad, "--method", "gibbs"}).code, 2);
  EXPECT_EQ(cli({"infer", "--model", m}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  const auto e = evidence("e.json", {0, 1});
  EXPECT_EQ(cli({"infer", "--model", m, "--evidence", e, "--max-passes", "0"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(Cli, OracleOverLimitExitsThree) {
  const auto m = small_model("m.json", CptSpec::diag(0.8));
  const auto e = evidence("e.json", {0, 1});
  const CliResult r = cli({"oracle", "--model", m, "--evidence", e, "--tree-limit", "2"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("16"), std::string::npos) << r.err;
  const CliResult ok = cli({"oracle", "--model", m, "--evidence", e, "--top-k", "2"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(parse_json(ok.out, "output")["top_trees"].size(), 2u);
}

TEST_F(Cli, ImpossibleEvidenceExitsThree) {
  // both leaves copy the single root, so disagreeing leaves are impossible
  const auto m = path("m.json");
  write_text_file(m, save_model(build_layered_model({1, 2}, 2, ParentPriorSpec::nearest(), CptSpec::identity(),
                                                    RootPriorSpec{})));
  const auto e = evidence("e.json", {0, 1});
  EXPECT_EQ(cli({"infer", "--model", m, "--evidence", e, "--method", "oracle"}).code, 3);
}

TEST_F(Cli, CompareUniformTablesHasZeroDivergence) {
  const auto m = small_model("m.json", CptSpec::uniform());
  const auto e = evidence("e.json", {0, 1});
  const CliResult r = cli({"compare", "--model", m, "--evidence", e});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = parse_json(r.out, "output");
  EXPECT_NEAR(j["kl"]["svi"].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(j["kl"]["loopy"].get<double>(), 0.0, 1e-12);
  EXPECT_EQ(j["nodes"].size(), 4u);
}

TEST_F(Cli, CompareSingletonMenusMatchesTruth) {
  const auto m = small_model("m.json", CptSpec::diag(0.8), ParentPriorSpec::nearest());
  const auto e = evidence("e.json", {0, 1});
  const CliResult r = cli({"compare", "--model", m, "--evidence", e});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = parse_json(r.out, "output");
  for (const auto& row : j["nodes"])
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_NEAR(row["svi"][k].get<double>(), row["true"][k].get<double>(), 1e-9);
  const CliResult text = cli({"compare", "--model", m, "--evidence", e, "--format", "text"});
  ASSERT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("KL"), std::string::npos);
}

TEST_F(Cli, ExperimentWritesReportsDeterministically) {
  write_text_file(path("cfg.json"), R"({"experiment": "marginal_comparison", "num_runs": 2})");
  const CliResult a = cli({"experiment", "--config", path("cfg.json"), "--out", path("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  const CliResult b = cli({"experiment", "--config", path("cfg.json"), "--out", path("b"), "--threads", "2"});
  ASSERT_EQ(b.code, 0) << b.err;
  const std::string csv = read_text_file(path("a/results.csv"));
  EXPECT_EQ(csv, read_text_file(path("b/results.csv")));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_TRUE(std::filesystem::exists(path("a/timing.json")));
  const Json report = parse_json(read_text_file(path("a/report.json")), "report");
  EXPECT_EQ(report["config"]["seed"], 0);

  const CliResult c = cli({"experiment", "--config", path("cfg.json"), "--out", path("c"), "--seed", "7"});
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(read_text_file(path("c/results.csv")), csv);
}

TEST_F(Cli, FreeEnergyExperimentRecordsEveryCase) {
  write_text_file(path("cfg.json"), R"({"experiment": "free_energy_comparison", "num_cases": 5})");
  const CliResult r = cli({"experiment", "--config", path("cfg.json"), "--out", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json report = parse_json(read_text_file(path("out/report.json")), "report");
  EXPECT_EQ(report["records"].size(), 5u);
  EXPECT_EQ(cli({"experiment", "--config", path("missing.json"), "--out", path("x")}).code, 2);
  write_text_file(path("bad.json"), R"({"experiment": "nonsense"})");
  EXPECT_EQ(cli({"experiment", "--config", path("bad.json"), "--out", path("x")}).code, 2);
}

TEST_F(Cli, GenerateThenLearn) {
  write_text_file(path("cfg.json"), R"({"layer_sizes": [1, 2, 4]})");
  const CliResult g = cli({"generate", "--kind", "free_energy_comparison", "--config", path("cfg.json"), "--out",
                     path("m.json"), "--dataset-out", path("d.json"), "--evidence-out", path("e.json"), "--cases",
                     "10"});
  ASSERT_EQ(g.code, 0) << g.err;
  const auto model = load_model_file(path("m.json"));
  EXPECT_EQ(model.num_nodes(), 7);
  EXPECT_EQ(load_evidence(read_text_file(path("e.json")), &model).states.size(), 4u);
  const CliResult l = cli({"learn", "--model", path("m.json"), "--dataset", path("d.json"), "--iterations", "2", "--out",
                     path("learned.json")});
  ASSERT_EQ(l.code, 0) << l.err;
  const Json j = parse_json(read_text_file(path("learned.json")), "learned");
  EXPECT_TRUE(j.contains("training"));
  EXPECT_NO_THROW(load_model_file(path("learned.json")));

  const CliResult again = cli({"generate", "--kind", "free_energy_comparison", "--config", path("cfg.json")});
  EXPECT_EQ(again.out, read_text_file(path("m.json")));
  EXPECT_EQ(cli({"generate", "--kind", "other"}).code, 2);
}
