#include <qkdsim/chsh.hpp>
#include <qkdsim/coincidence.hpp>
#include <qkdsim/key_pipeline.hpp>
#include <qkdsim/timing_side_channel.hpp>

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace qkdsim;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("qkdsim_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(QKDSIM_CLI_PATH) + " " + args + " > " +
                            (dir_ / "stdout.txt").string() + " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string out(const std::string& sub) const { return (dir_ / sub).string(); }

  std::string write_file(const std::string& name, const std::string& text) {
    std::ofstream f(dir_ / name);
    f << text;
    return (dir_ / name).string();
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
  }

  std::string stderr_text() const { return slurp(dir_ / "stderr.txt"); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--out " + out("o") + " figure fig9"), 1);
  EXPECT_NE(stderr_text().find("fig3"), std::string::npos);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, InputErrors) {
  EXPECT_EQ(run("--out " + out("o") + " correlate " + out("missing_a.csv") + " " + out("missing_b.csv")), 2);
  const auto bad = write_file("bad.csv", "time_ps,basis,outcome\n10,0,1\n20,0,7\n");
  EXPECT_EQ(run("--out " + out("o") + " correlate " + bad + " " + bad), 2);
  EXPECT_NE(stderr_text().find("line 3"), std::string::npos);
  const auto typo = write_file("typo.ini", "[link]\ndistanse_m = 5\n");
  EXPECT_EQ(run("--scenario " + typo + " --out " + out("o") + " linkbudget"), 2);
}

TEST_F(CliTest, SecurityAbortAndReconciliationFailure) {
  const auto noisy = write_file("noisy.ini", "[state]\naccidental_fraction = 0.5\n[protocol]\nduration_s = 0.02\n");
  EXPECT_EQ(run("--scenario " + noisy + " --out " + out("o") + " keygen"), 3);
  EXPECT_NE(stderr_text().find("CHSH"), std::string::npos);
  const auto broken = write_file("broken.ini",
                                 "[state]\nvisibility = 0.6\n[protocol]\nduration_s = 0.05\n"
                                 "s_threshold = 0\ncascade_passes = 1\n");
  EXPECT_EQ(run("--scenario " + broken + " --out " + out("o") + " keygen"), 4);
}

TEST_F(CliTest, GenerateThenCorrelateWithVerification) {
  ASSERT_EQ(run("--seed 5 --out " + out("g") + " generate"), 0);
  ASSERT_EQ(run("--verify --out " + out("c") + " correlate " + out("g/timestamps_a.csv") + " " +
                out("g/timestamps_b.csv") + " --max-lag 6000000"),
            0);
  EXPECT_NE(slurp(out("c/correlate.json")).find("\"verified\": true"), std::string::npos);
  std::istringstream timing(slurp(dir_ / "stdout.txt"));
  std::string line;
  bool fft_seen = false, direct_seen = false;
  while (std::getline(timing, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("method") == "fft") {
      fft_seen = true;
      EXPECT_LT(j.at("elapsed_seconds").get<double>(), 1.0);
    }
    direct_seen |= j.at("method") == "direct";
  }
  EXPECT_TRUE(fft_seen && direct_seen);
  std::ifstream h(out("c/histogram.csv"));
  const auto r = coincidence::read_histogram(h);
  EXPECT_LE(std::abs(r.recovered_delay - 4'096'000), 1296);
}

TEST_F(CliTest, OutputsRoundTripThroughModuleParsers) {
  ASSERT_EQ(run("--out " + out("k") + " keygen"), 0);
  std::ifstream ka(out("k/key_alice.txt")), kb(out("k/key_bob.txt"));
  const auto a = keys::read_key(ka);
  const auto b = keys::read_key(kb);
  EXPECT_EQ(a.bits, b.bits);
  EXPECT_GT(a.length(), 0u);
  std::ifstream counts(out("k/chsh_counts.csv"));
  EXPECT_GT(chsh::read_counts(counts).total(), 0u);

  ASSERT_EQ(run("--out " + out("s") + " sidechannel"), 0);
  std::ifstream curve(out("s/sidechannel_curve.csv"));
  EXPECT_FALSE(sidechannel::read_curve(curve).empty());
  std::ifstream dens(out("s/detector_1.csv"));
  EXPECT_NEAR(sidechannel::read_density(dens).total(), 1.0, 1e-9);
}

TEST_F(CliTest, EverySubcommandIsDeterministic) {
  const auto scen = write_file("s.ini", "[protocol]\nduration_s = 0.03\n");
  const auto gen = "--seed 9 --out " + out("gen") + " generate";
  ASSERT_EQ(run(gen), 0);
  const std::string ts = out("gen/timestamps_a.csv") + " " + out("gen/timestamps_b.csv");
  const std::vector<std::string> cmds{"linkbudget", "generate", "correlate " + ts, "g2", "chsh",
                                      "sidechannel", "keygen", "figure fig3", "figure fig4",
                                      "figure fig5", "figure fig7"};
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    const auto d1 = out("run1_" + std::to_string(i));
    const auto d2 = out("run2_" + std::to_string(i));
    ASSERT_EQ(run("--scenario " + scen + " --seed 3 --out " + d1 + " " + cmds[i]), 0) << cmds[i];
    ASSERT_EQ(run("--scenario " + scen + " --seed 3 --out " + d2 + " " + cmds[i]), 0) << cmds[i];
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(d1)) {
      ++files;
      EXPECT_EQ(slurp(e.path()), slurp(fs::path(d2) / e.path().filename())) << cmds[i] << " " << e.path();
    }
    EXPECT_GT(files, 0u) << cmds[i];
  }
  // A different seed changes the simulated key.
  ASSERT_EQ(run("--scenario " + scen + " --seed 4 --out " + out("other") + " keygen"), 0);
  EXPECT_NE(slurp(out("other/key_alice.txt")), slurp(out("run1_6/key_alice.txt")));
}
