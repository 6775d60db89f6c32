#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "impnet/impnet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(IMPNET_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  Run r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<json> lines(const std::string& out) {
  std::vector<json> v;
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) v.push_back(json::parse(line));
  }
  return v;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "impnet_cli_tests";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const auto r = cli("synth --out " + (dir_ / "set").string() + " --classes 3 --per-class 2 --size 32 --seed 1");
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_EQ(cli("train " + small_model() + " --manifest " + manifest() + " --checkpoint " + ckpt() + " --epochs 1")
                  .code,
              0);
  }

  static std::string small_model() { return "--classes 3 --input-size 32"; }
  static std::string manifest() { return (dir_ / "set" / "manifest.csv").string(); }
  static std::string ckpt() { return (dir_ / "model.ckpt").string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("train --manifest x.csv").code, 2);
  EXPECT_EQ(cli("eval --manifest " + manifest() + " --checkpoint " + ckpt() + " --classes 1").code, 2);
  EXPECT_EQ(cli("bench --input-size 40").code, 2);
  EXPECT_EQ(cli("train --manifest " + manifest() + " --checkpoint x --mirror-train sideways").code, 2);
}

TEST_F(Cli, DataErrorsExitThree) {
  EXPECT_EQ(cli("train " + small_model() + " --manifest " + (dir_ / "nope.csv").string() + " --checkpoint " +
                (dir_ / "x.ckpt").string())
                .code,
            3);
  const auto bad = dir_ / "bad_label.csv";
  std::ofstream(bad) << "img_0000.png,9\n";
  EXPECT_EQ(cli("eval " + small_model() + " --manifest " + bad.string() + " --image-root " + (dir_ / "set").string() +
                " --checkpoint " + ckpt())
                .code,
            3);
  const auto missing = dir_ / "missing_image.csv";
  std::ofstream(missing) << "no_such.png,0\n";
  EXPECT_EQ(cli("eval " + small_model() + " --manifest " + missing.string() + " --checkpoint " + ckpt()).code, 3);
}

TEST_F(Cli, CheckpointErrorsExitFour) {
  EXPECT_EQ(cli("eval " + small_model() + " --manifest " + manifest() + " --checkpoint " + (dir_ / "none").string())
                .code,
            4);
  EXPECT_EQ(cli("eval --classes 4 --input-size 32 --manifest " + manifest() + " --checkpoint " + ckpt()).code, 4);
  const auto junk = dir_ / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_EQ(cli("eval " + small_model() + " --manifest " + manifest() + " --checkpoint " + junk.string()).code, 4);
}

TEST_F(Cli, TrainEchoesDefaultsAndWritesCheckpoint) {
  const auto out = dir_ / "zero.ckpt";
  const auto r = cli("train " + small_model() + " --manifest " + manifest() + " --checkpoint " + out.string() +
                     " --epochs 0");
  ASSERT_EQ(r.code, 0);
  const auto events = lines(r.out);
  ASSERT_GE(events.size(), 2u);
  const auto& train = events.front()["train"];
  EXPECT_EQ(train["batch"], 64);
  EXPECT_EQ(train["lr_base"], 0.001);
  EXPECT_EQ(train["lr_head"], 0.01);
  EXPECT_EQ(train["wd"], 4e-5);
  EXPECT_EQ(events.back()["event"], "done");
  EXPECT_TRUE(fs::exists(out));
  impnet::ModelConfig c;
  c.num_classes = 3;
  c.input_size = 32;
  EXPECT_EQ(impnet::load_checkpoint(out.string(), c).size(), impnet::build(c, 0).size());
}

TEST_F(Cli, NoEcaCheckpointHasNoEcaEntries) {
  const auto out = dir_ / "noeca.ckpt";
  ASSERT_EQ(cli("train " + small_model() + " --no-eca --manifest " + manifest() + " --checkpoint " + out.string() +
                " --epochs 0")
                .code,
            0);
  for (const auto& [name, _] : impnet::read_checkpoint_file(out.string())) EXPECT_FALSE(name.starts_with("eca."));
}

TEST_F(Cli, EvalReport) {
  const auto r = cli("eval " + small_model() + " --manifest " + manifest() + " --checkpoint " + ckpt());
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  ASSERT_TRUE(j.contains("accuracy") && j.contains("confusion") && j.contains("per_class"));
  ASSERT_EQ(j["confusion"].size(), 3u);
  int total = 0;
  for (const auto& row : j["confusion"]) {
    ASSERT_EQ(row.size(), 3u);
    for (const auto& v : row) total += v.get<int>();
  }
  EXPECT_EQ(total, 6);
  EXPECT_GE(j["accuracy"].get<double>(), 0.0);
  EXPECT_LE(j["accuracy"].get<double>(), 1.0);
}

TEST_F(Cli, MirrorMatchesPlainOnSymmetricImages) {
  const auto sym = dir_ / "sym";
  fs::create_directories(sym);
  std::ofstream m(sym / "m.csv");
  for (int i = 0; i < 3; ++i) {
    impnet::Image img{32, 32, 1, std::vector<std::uint8_t>(32 * 32)};
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 16; ++x) {
        const auto v = static_cast<std::uint8_t>((y * 37 + x * 11 + i * 50) % 256);
        img.pixels[y * 32 + x] = img.pixels[y * 32 + 31 - x] = v;
      }
    impnet::write_png((sym / ("s" + std::to_string(i) + ".png")).string(), img);
    m << "s" << i << ".png," << i << '\n';
  }
  m.close();
  const std::string base = "eval " + small_model() + " --manifest " + (sym / "m.csv").string() + " --checkpoint " + ckpt();
  const auto a = cli(base), b = cli(base + " --no-mirror");
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(json::parse(a.out), json::parse(b.out));
}

TEST_F(Cli, AblateRows) {
  const auto r = cli("ablate " + small_model() + " --manifest " + manifest() + " --epochs 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  ASSERT_EQ(j["rows"].size(), 5u);
  for (const auto& row : j["rows"]) {
    EXPECT_GE(row["accuracy"].get<double>(), 0.0);
    EXPECT_LE(row["accuracy"].get<double>(), 1.0);
    EXPECT_GT(row["param_count"].get<std::int64_t>(), 0);
  }
}

TEST_F(Cli, BenchJson) {
  const auto r = cli("bench " + small_model() + " --checkpoint " + ckpt() + " --iterations 3 --warmup 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_GT(j["fps_single_lane"].get<double>(), 0.0);
  EXPECT_EQ(j["reference"]["fps"], 40);
  EXPECT_EQ(j["forwards_per_frame"], 2);
  EXPECT_EQ(j["probabilities"].size(), 3u);
  EXPECT_EQ(j["param_count"], 1445921 - 8 * 5 * 257 + 3 * 5 * 257);
}
