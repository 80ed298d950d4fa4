#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("vaevar_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliRun run(const std::string& args) const {
    const std::string cmd = std::string(VAEVAR_CLI_PATH) + " " + args + " 2>" + path("stderr.txt");
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  static std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpSucceeds) { EXPECT_EQ(run("--help").code, 0); }

TEST_F(Cli, UsageErrorsAreConfigErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("experiment --repeats notanumber").code, 2);
  EXPECT_EQ(run("experiment --preset nope -q").code, 2);
  EXPECT_EQ(run("experiment --nonlin cubic -q").code, 2);
  EXPECT_EQ(run("experiment --nonlin saturated --methods naive -q").code, 2);
  EXPECT_EQ(run("assimilate").code, 2);
}

TEST_F(Cli, BadConfigFile) {
  write("bad.json", R"({"n_val": 10, "unknown_key": 1})");
  EXPECT_EQ(run("experiment -q --config " + path("bad.json")).code, 2);
  write("broken.json", "{ not json");
  EXPECT_EQ(run("experiment -q --config " + path("broken.json")).code, 2);
  EXPECT_EQ(run("experiment -q --config " + path("missing.json")).code, 2);
}

TEST_F(Cli, CorruptModelIsInputError) {
  write("model.txt", "garbage\n");
  EXPECT_EQ(run("assimilate --model " + path("model.txt")).code, 2);
}

TEST_F(Cli, NumericFailure) {
  // Every trajectory overflows.
  write("diverge.json", R"({"preset": "l96_F", "system": {"forcing": 2e5}, "integrator": {"step_size": 0.5}})");
  EXPECT_EQ(run("gen-data --n-train 4 --config " + path("diverge.json") + " --out " + path("s.txt")).code, 3);
}

TEST_F(Cli, GenerateTrainAssimilate) {
  ASSERT_EQ(run("gen-data --n-train 200 --seed 3 --out " + path("samples.txt")).code, 0);
  EXPECT_EQ(slurp(path("samples.txt")).rfind("VAEVAR-SAMPLES v1 dim=3 n=200\n", 0), 0u);
  ASSERT_EQ(run("train --epochs 5 --seed 3 --samples " + path("samples.txt") + " --out " + path("model.txt") +
                " --loss " + path("loss.csv"))
                .code,
            0);
  const std::string loss = slurp(path("loss.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 6);
  const CliRun a = run("assimilate --n-train 200 --seed 3 --masks XY --sigma-noise 0.3 --model " + path("model.txt"));
  ASSERT_EQ(a.code, 0);
  for (const char* m : {"trad", "vae", "vae_obs", "vae_obs_reg", "naive"}) {
    EXPECT_NE(a.out.find(std::string("\n") + m + " "), std::string::npos) << m;
  }
  // An L96 run cannot use a three-variable model.
  EXPECT_EQ(run("assimilate --preset l96_F --n-train 200 --model " + path("model.txt")).code, 2);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  write("cfg.json", R"({"n_train": 200, "n_val": 4, "masks": ["X"], "sigma_noise": [0.3], "repeats": 1,
                        "methods": ["trad", "naive"], "vae": {"epochs": 3}})");
  const CliRun a = run("experiment -q --config " + path("cfg.json"));
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 3);
  const CliRun b = run("experiment -q --config " + path("cfg.json") + " --repeats 2 --masks X,Y --manifest " +
                    path("m.json") + " --summary " + path("s.csv"));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(std::count(b.out.begin(), b.out.end(), '\n'), 1 + 2 * 2 * 2);
  EXPECT_NE(slurp(path("m.json")).find("\"repeats\": 2"), std::string::npos);
  EXPECT_EQ(slurp(path("s.csv")).rfind("method,mask,nonlin,sigma_noise,rmse_bg_mean", 0), 0u);
}
