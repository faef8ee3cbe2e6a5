#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "roomtwin/cli.hpp"
#include "roomtwin/serialize.hpp"
#include "roomtwin/wav.hpp"

using namespace roomtwin;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ROOMTWIN_FIXTURES;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("roomtwin_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static int run(std::vector<std::string> args) {
    // Keep the resolved-config echo and diagnostics out of the test log.
    testing::internal::CaptureStderr();
    const int code = cli_main(args);
    testing::internal::GetCapturedStderr();
    return code;
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every regular file under `a` has a byte-identical twin under `b`.
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++n;
  }
  EXPECT_GT(n, 0u);
}

}  // namespace

TEST_F(Cli, ChirpWritesExpectedLength) {
  ASSERT_EQ(run({"chirp", "--f0", "11000", "--f1", "19000", "--dur", "0.2", "-o", path("c1.wav")}), 0);
  const auto w = wav::read(path("c1.wav"));
  EXPECT_EQ(w.samples.size(), 9600u);
  EXPECT_EQ(w.sample_rate, 48000.0);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"teleport"}), 2);
  EXPECT_EQ(run({"chirp"}), 2);                              // missing --output
  EXPECT_EQ(run({"chirp", "--bogus", "1", "-o", path("x.wav")}), 2);
  EXPECT_EQ(run({"chirp", "--dur", "abc", "-o", path("x.wav")}), 2);
  EXPECT_EQ(run({"render", "--tx", "1", "2", "-o", path("r.json")}), 2);
}

TEST_F(Cli, HelpExitsZero) {
  testing::internal::CaptureStdout();
  EXPECT_EQ(run({"fit-field", "--help"}), 0);
  const std::string help = testing::internal::GetCapturedStdout();
  // Defaults are listed.
  EXPECT_NE(help.find("256"), std::string::npos);
  EXPECT_NE(help.find("512"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run({"render", "--scene", path("missing.json"), "-o", path("r.json")}), 1);
  std::ofstream(path("broken.json")) << "{\"mesh\": ";
  EXPECT_EQ(run({"render", "--scene", path("broken.json"), "-o", path("r.json")}), 1);
  std::ofstream(path("bad.wav")) << "RIFF----WAVEjunk";
  EXPECT_EQ(run({"extract", "--recording", path("bad.wav"), "-o", path("r.json")}), 1);
  // Invalid chirp parameters are a runtime failure, not a parse failure.
  EXPECT_EQ(run({"chirp", "--f0", "30000", "--f1", "19000", "-o", path("c.wav")}), 1);
}

TEST_F(Cli, ConfigFileFillsUnsetOptions) {
  std::ofstream(path("cfg.json")) << "{\"dur\": 0.1, \"f0\": 12000}";
  ASSERT_EQ(run({"chirp", "--config", path("cfg.json"), "-o", path("a.wav")}), 0);
  EXPECT_EQ(wav::read(path("a.wav")).samples.size(), 4800u);
  // Flags win over the file.
  ASSERT_EQ(run({"chirp", "--config", path("cfg.json"), "--dur", "0.05", "-o", path("b.wav")}), 0);
  EXPECT_EQ(wav::read(path("b.wav")).samples.size(), 2400u);
  std::ofstream(path("typo.json")) << "{\"duration\": 0.1}";
  EXPECT_EQ(run({"chirp", "--config", path("typo.json"), "-o", path("c.wav")}), 1);
}

TEST_F(Cli, ResolvedConfigIsEchoed) {
  testing::internal::CaptureStderr();
  ASSERT_EQ(cli_main({"chirp", "--dur", "0.1", "-o", path("a.wav")}), 0);
  const std::string err = testing::internal::GetCapturedStderr();
  const auto j = io::Json::parse(err.substr(0, err.find('\n')));
  EXPECT_EQ(j["command"], "chirp");
  EXPECT_EQ(j["config"]["dur"], 0.1);
  EXPECT_EQ(j["config"]["f0"], 11000.0);
}

TEST_F(Cli, SimulateHandshakeMatchesGolden) {
  ASSERT_EQ(run({"simulate", "--scene", (kFixtures / "shoebox.json").string(), "--session",
                 (kFixtures / "session.json").string(), "-o", path("sim")}),
            0);
  ASSERT_EQ(run({"handshake", path("sim"), "-o", path("rirs")}), 0);
  const auto got = io::read_jsonl(path("rirs/records.jsonl"));
  const auto want = io::read_jsonl(kFixtures / "golden" / "handshake_records.jsonl");
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i]["index"], want[i]["index"]);
    EXPECT_EQ(got[i]["rir"], want[i]["rir"]);
    for (const char* k : {"t1", "t2", "t3", "t4", "tof"}) {
      EXPECT_NEAR(got[i][k].get<double>(), want[i][k].get<double>(), 1e-9) << i << ' ' << k;
    }
    const auto w = wav::read(path("rirs/" + got[i]["rir"].get<std::string>()));
    EXPECT_EQ(w.samples.size(), 14400u);  // 0.3 s
  }
  EXPECT_EQ(io::read_json(path("rirs/report.json")), io::read_json(kFixtures / "golden" / "handshake_report.json"));
}

TEST_F(Cli, MetricsOnIdenticalDirectoriesAreZero) {
  ASSERT_EQ(run({"render", "--scene", (kFixtures / "shoebox.json").string(), "--poses",
                 (kFixtures / "poses.jsonl").string(), "--max-bounces", "3", "-o", path("a")}),
            0);
  fs::copy(path("a"), path("b"));
  ASSERT_EQ(run({"metrics", "--a", path("a"), "--b", path("b"), "-o", path("report.csv")}), 0);
  std::ifstream in(path("report.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "name,env_err,amp_err,ms_stft_err,t60_diff,c50_diff,edt_diff");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    while (std::getline(ss, cell, ',')) {
      if (cell == "nan") continue;  // T60 undefined on both sides
      EXPECT_EQ(std::stod(cell), 0.0) << line;
    }
    ++rows;
  }
  EXPECT_GT(rows, 0);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  const std::string scene = (kFixtures / "shoebox.json").string();
  for (const char* tag : {"1", "2"}) {
    const std::string d = path(tag);
    fs::create_directories(d);
    ASSERT_EQ(run({"chirp", "-o", d + "/c.wav"}), 0);
    ASSERT_EQ(run({"simulate", "--scene", scene, "--session", (kFixtures / "session.json").string(), "-o", d + "/sim"}), 0);
    ASSERT_EQ(run({"handshake", d + "/sim", "-o", d + "/rirs"}), 0);
    ASSERT_EQ(run({"render", "--scene", scene, "--poses", (kFixtures / "poses.jsonl").string(), "--max-bounces", "3",
                   "-o", d + "/render"}),
              0);
  }
  expect_same_tree(path("1"), path("2"));
}

TEST_F(Cli, OutputIndependentOfThreadCount) {
  const std::string scene = (kFixtures / "shoebox.json").string();
  const std::string poses = (kFixtures / "poses.jsonl").string();
  ASSERT_EQ(run({"--threads", "1", "render", "--scene", scene, "--poses", poses, "-o", path("t1")}), 0);
  ASSERT_EQ(run({"--threads", "4", "render", "--scene", scene, "--poses", poses, "-o", path("t4")}), 0);
  expect_same_tree(path("t1"), path("t4"));
}
