#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mpstr_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" MPSTR_CLI "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
  }

  void tiny_corpus() const {
    ASSERT_EQ(run("gen-data --out data --train 24 --val 0 --test 6 --max-len 4").status, 0);
  }

  void write_config(const std::string& name, const std::string& body) const { std::ofstream(dir_ / name) << body; }

  fs::path dir_;
};

const char* kTinyConfig = R"({"train_dir": "data/train", "test_dir": "data/test",
  "checkpoint": "m.ckpt", "log": "log.jsonl",
  "train": {"iterations": 4, "batch_size": 4, "log_every": 1, "permutations": 2}})";

}  // namespace

TEST_F(Cli, GenDataDefaultsWriteThreeSplits) {
  const CliResult r = run("gen-data --out corpus");
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* split : {"train", "val", "test"}) {
    EXPECT_TRUE(fs::exists(dir_ / "corpus" / split / "manifest.tsv")) << split;
    EXPECT_TRUE(fs::exists(dir_ / "corpus" / split / "gen-config.json")) << split;
  }
  std::ifstream in(dir_ / "corpus/train/manifest.tsv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2000);
}

TEST_F(Cli, GenDataBadOutputDirectoryFails) {
  std::ofstream(dir_ / "blocker") << "file";
  const CliResult r = run("gen-data --out blocker/x --train 2 --val 0 --test 0");
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(Cli, GenDataIsReproducibleForASeed) {
  ASSERT_EQ(run("gen-data --out a --seed 3 --train 30 --val 0 --test 0 --augment").status, 0);
  ASSERT_EQ(run("gen-data --out b --seed 3 --train 30 --val 0 --test 0 --augment").status, 0);
  ASSERT_EQ(run("gen-data --out c --seed 4 --train 30 --val 0 --test 0 --augment").status, 0);
  EXPECT_EQ(slurp(dir_ / "a/train/manifest.tsv"), slurp(dir_ / "b/train/manifest.tsv"));
  for (const auto& e : fs::directory_iterator(dir_ / "a/train/images"))
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b/train/images" / e.path().filename()));
  EXPECT_NE(slurp(dir_ / "a/train/manifest.tsv"), slurp(dir_ / "c/train/manifest.tsv"));
}

TEST_F(Cli, MalformedConfigGivesADiagnostic) {
  write_config("bad.json", "{\"train\": {\"iterations\": 4,}");
  CliResult r = run("train bad.json");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("bad.json"), std::string::npos) << r.err;
  write_config("typo.json", R"({"trian": {}})");
  r = run("train typo.json");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("trian"), std::string::npos) << r.err;
  r = run("train missing.json");
  EXPECT_NE(r.status, 0);
}

TEST_F(Cli, TrainResumeContinuesTheStepCount) {
  tiny_corpus();
  write_config("cfg.json", kTinyConfig);
  CliResult r = run("train cfg.json");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("config {", 0), 0u);
  r = run("train cfg.json --resume m.ckpt --iterations 7");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("resuming at step 4"), std::string::npos) << r.out;
  std::ifstream log(dir_ / "log.jsonl");
  std::vector<long long> steps;
  for (std::string l; std::getline(log, l);) steps.push_back(nlohmann::json::parse(l).at("step").get<long long>());
  EXPECT_EQ(steps, (std::vector<long long>{0, 1, 2, 3, 4, 5, 6}));
}

TEST_F(Cli, DumpMasksMatchesGoldenTables) {
  CliResult r = run("dump-masks --kind train --perm 1,3,2 --L 3");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, slurp(fs::path(MPSTR_GOLDEN_DIR) / "train_perm132_L3.txt"));
  r = run("dump-masks --kind ar --L 4");
  EXPECT_EQ(r.out, slurp(fs::path(MPSTR_GOLDEN_DIR) / "ar_L4.txt"));
  r = run("dump-masks --kind cloze --L 4");
  EXPECT_EQ(r.out, slurp(fs::path(MPSTR_GOLDEN_DIR) / "cloze_L4.txt"));
  r = run("dump-masks --kind train --perm 1,1,2 --L 3");
  EXPECT_NE(r.status, 0);
  r = run("dump-masks --kind sideways --L 3");
  EXPECT_NE(r.status, 0);
}

TEST_F(Cli, EvalAndPredictOnATinyModel) {
  tiny_corpus();
  write_config("cfg.json", kTinyConfig);
  ASSERT_EQ(run("train cfg.json").status, 0);
  CliResult r = run("eval --checkpoint m.ckpt --data data/test --tsv report.tsv");
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* key : {"AR accuracy", "NAR accuracy", "cloze accuracy", "length accuracy"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  std::ifstream tsv(dir_ / "report.tsv");
  int lines = 0;
  for (std::string l; std::getline(tsv, l);) ++lines;
  EXPECT_EQ(lines, 7);  // header + 6 samples

  r = run("predict --checkpoint m.ckpt --mode ar data/test/images/000000.pgm data/test/images/000001.pgm");
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream lines_in(r.out);
  int records = 0;
  for (std::string l; std::getline(lines_in, l); ++records) {
    const auto j = nlohmann::json::parse(l);
    EXPECT_EQ(j.at("mode"), "ar");
    EXPECT_GE(j.at("length_used").get<int>(), 1);
    EXPECT_TRUE(j.contains("text"));
    EXPECT_TRUE(j.contains("confidence"));
  }
  EXPECT_EQ(records, 2);
  EXPECT_NE(run("predict --checkpoint m.ckpt --mode beam data/test/images/000000.pgm").status, 0);
  EXPECT_NE(run("eval --checkpoint nope.ckpt --data data/test").status, 0);
}

TEST_F(Cli, SelfcheckQuickPasses) {
  const CliResult r = run("selfcheck --quick");
  EXPECT_EQ(r.status, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("0 mismatches"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("selfcheck passed"), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownSubcommandFails) { EXPECT_NE(run("frobnicate").status, 0); }
