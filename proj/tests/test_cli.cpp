#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "uccd/uccd.hpp"

using namespace uccd;
namespace fs = std::filesystem;

namespace {

const std::string kProblems = UCCD_PROBLEMS_DIR;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("uccd_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  std::string write(const std::string& name, const std::string& text) {
    fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }

  RunOptions run_of(const std::string& path, const std::string& sub) {
    RunOptions o;
    o.path = path;
    o.out = (dir_ / sub).string();
    o.mc_samples = 200;
    return o;
  }

  fs::path dir_;
};

std::string doc_with(const std::string& name, const std::string& from, const std::string& to) {
  std::string s = read_file(kProblems + "/" + name);
  auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  if (at != std::string::npos) s.replace(at, from.size(), to);
  return s;
}

int shell(const std::string& cmd) {
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_F(Cli, ValidateAcceptsSamples) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_validate(kProblems + "/regulator.json", out, err), kExitOk);
  EXPECT_EQ(out.str().rfind("ok: 1 states, 1 controls", 0), 0u) << out.str();
}

TEST_F(Cli, ValidateMissingGridIsValidationError) {
  std::string path = write("nogrid.json", doc_with("two_node.json", R"("grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 2},)", ""));
  std::ostringstream out, err;
  EXPECT_EQ(cmd_validate(path, out, err), kExitValidation);
  EXPECT_NE(err.str().find("/grid"), std::string::npos) << err.str();
}

TEST_F(Cli, ValidateNegativeSigmaIsValidationError) {
  std::string path = write("sigma.json", doc_with("chance_static.json", R"("sigma": 0.5)", R"("sigma": -0.5)"));
  std::ostringstream out, err;
  EXPECT_EQ(cmd_validate(path, out, err), kExitValidation);
  EXPECT_NE(err.str().find("line "), std::string::npos) << err.str();
}

TEST_F(Cli, MissingFileIsValidationError) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_validate((dir_ / "absent.json").string(), out, err), kExitValidation);
}

TEST_F(Cli, FuzzyUnderChanceConstraintIsCompatibilityError) {
  RunOptions o = run_of(kProblems + "/fuzzy_gain.json", "scc");
  o.formulation = "scc";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_solve(o, out, err), kExitCompatibility);
  EXPECT_FALSE(fs::exists(dir_ / "scc" / "solution.json"));
}

TEST_F(Cli, SolveWritesArtifacts) {
  RunOptions o = run_of(kProblems + "/double_integrator.json", "det");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_solve(o, out, err), kExitOk) << err.str();
  for (const char* f : {"manifest.json", "solution.json", "trajectories.csv", "report.json"})
    EXPECT_TRUE(fs::exists(dir_ / "det" / f)) << f;
  json sol = json::parse(read_file((dir_ / "det" / "solution.json").string()));
  EXPECT_EQ(sol["status"], "optimal");
  EXPECT_NEAR(sol["objective"].get<double>(), 12.0, 1e-3);
  json man = json::parse(read_file((dir_ / "det" / "manifest.json").string()));
  EXPECT_EQ(man["command"], "solve");
  EXPECT_EQ(man["problem_hash"].get<std::string>().rfind("fnv1a64:", 0), 0u);
  std::string csv = read_file((dir_ / "det" / "trajectories.csv").string());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 252);
}

TEST_F(Cli, OverridesAreRecorded) {
  RunOptions o = run_of(kProblems + "/regulator.json", "se");
  o.formulation = "se";
  o.samples = 8;
  o.seed = 2;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_solve(o, out, err), kExitOk) << err.str();
  json man = json::parse(read_file((dir_ / "se" / "manifest.json").string()));
  EXPECT_EQ(man["formulation"], "se");
  EXPECT_EQ(man["seed"], 2);
  json sol = json::parse(read_file((dir_ / "se" / "solution.json").string()));
  EXPECT_EQ(sol["scenarios"]["points"].size(), 8u);
}

TEST_F(Cli, RepeatedSolvesGiveIdenticalFiles) {
  RunOptions a = run_of(kProblems + "/regulator.json", "a");
  RunOptions b = run_of(kProblems + "/regulator.json", "b");
  a.samples = b.samples = 16;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_solve(a, out, err), kExitOk) << err.str();
  ASSERT_EQ(cmd_solve(b, out, err), kExitOk) << err.str();
  for (const char* f : {"solution.json", "trajectories.csv", "report.json"})
    EXPECT_EQ(read_file((dir_ / "a" / f).string()), read_file((dir_ / "b" / f).string())) << f;
}

TEST_F(Cli, NonOptimalExitCode) {
  RunOptions o = run_of(kProblems + "/regulator.json", "limit");
  o.max_outer_iters = 1;
  o.max_inner_iters = 1;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_solve(o, out, err), kExitNonOptimal);
  EXPECT_TRUE(fs::exists(dir_ / "limit" / "solution.json"));
}

TEST_F(Cli, ParetoCsvShape) {
  RunOptions o = run_of(kProblems + "/tradeoff.json", "pareto");
  o.samples = 16;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_pareto(o, 3, out, err), kExitOk) << err.str();
  std::string csv = read_file((dir_ / "pareto" / "pareto.csv").string());
  EXPECT_EQ(csv.rfind("alpha_w,o_mu,o_sigma,status,objective\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(Cli, OracleOnSmallProgram) {
  RunOptions o = run_of(kProblems + "/two_node.json", "oracle");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_oracle(o, 41, out, err), kExitOk) << err.str();
  json j = json::parse(read_file((dir_ / "oracle" / "oracle.json").string()));
  EXPECT_TRUE(j["agree"].get<bool>());
  RunOptions big = run_of(kProblems + "/regulator.json", "big");
  EXPECT_EQ(cmd_oracle(big, 21, out, err), kExitValidation);
}

TEST_F(Cli, LqrDemoPrintsGain) {
  LqrDemoOptions o;
  o.out = dir_.string();
  o.paths = 50;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_lqr_demo(o, out, err), kExitOk) << err.str();
  EXPECT_EQ(out.str().rfind("gain 2.41421356", 0), 0u) << out.str();
  std::string csv = read_file((dir_ / "lqr_ensemble.csv").string());
  EXPECT_EQ(csv.rfind("time,mean0,std0\n", 0), 0u);
  o.b = 0.0;
  EXPECT_EQ(cmd_lqr_demo(o, out, err), kExitNonOptimal);
  o.b = 1.0;
  o.paths = 0;
  EXPECT_EQ(cmd_lqr_demo(o, out, err), kExitValidation);
}

TEST_F(Cli, ToolExitCodes) {
  const std::string tool = std::string("'") + UCCD_TOOL_PATH + "'";
  EXPECT_EQ(shell(tool + " --version > /dev/null"), 0);
  EXPECT_EQ(shell(tool + " > /dev/null 2>&1"), 2);
  EXPECT_EQ(shell(tool + " solve > /dev/null 2>&1"), 2);
  EXPECT_EQ(shell(tool + " solve x.json --bogus > /dev/null 2>&1"), 2);
  EXPECT_EQ(shell(tool + " validate '" + kProblems + "/box_affine.json' > /dev/null"), 0);
  EXPECT_EQ(shell(tool + " solve '" + kProblems + "/fuzzy_gain.json' --formulation scc --out '" + dir_.string() +
                  "' > /dev/null 2>&1"),
            3);
}
