#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("seqdiou_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Runs the binary with stdout and stderr captured into files; returns the exit code.
  int run(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
    const std::string cmd = std::string(SEQDIOU_CLI) + " " + args + " > " + path("stdout") + " 2> " +
                            path("stderr");
    const int status = std::system(cmd.c_str());
    if (out) *out = slurp(path("stdout"));
    if (err) *err = slurp(path("stderr"));
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  void write(const std::string& name, const std::string& text) {
    std::ofstream(path(name), std::ios::binary) << text;
  }

  fs::path dir_;
};

const char* kNoiseless = R"({
  "num_frames": 8,
  "objects": [
    {"class_id": 0, "box": [100, 100, 200, 200], "velocity": [5, 0]},
    {"class_id": 1, "box": [600, 300, 700, 420], "velocity": [-4, 3]}
  ]
})";

const char* kNoisy = R"({
  "num_frames": 12,
  "num_videos": 2,
  "objects": [
    {"class_id": 0, "box": [100, 100, 200, 200], "velocity": [5, 0]},
    {"class_id": 0, "box": [160, 110, 260, 210], "velocity": [-3, 1]}
  ],
  "noise": {"coord_sigma": 4, "conf_sigma": 0.1, "base_confidence": 0.8,
            "duplicates": 2, "false_positive_rate": 1, "miss_rate": 0.1}
})";

}  // namespace

TEST_F(Cli, Version) {
  std::string out;
  EXPECT_EQ(run("--version", &out), 0);
  EXPECT_NE(out.find("0.1.0"), std::string::npos);
}

TEST_F(Cli, NoSubcommandIsUsageError) {
  std::string err;
  EXPECT_EQ(run("", nullptr, &err), 1);
  EXPECT_FALSE(err.empty());
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, MissingInputPrintsUsage) {
  std::string out, err;
  EXPECT_EQ(run("postprocess --method seq-diou-nms", &out, &err), 1);
  EXPECT_TRUE(out.empty());
  EXPECT_NE(err.find("--input"), std::string::npos);
}

TEST_F(Cli, SubcommandHelp) {
  std::string out;
  EXPECT_EQ(run("eval --help", &out), 0);
  EXPECT_NE(out.find("--oracle-sorted"), std::string::npos);
}

TEST_F(Cli, NoiselessEvalIsPerfect) {
  write("spec.json", kNoiseless);
  ASSERT_EQ(run("synth --seed 1 --spec " + path("spec.json") + " --out-dets " + path("d.jsonl") +
                " --out-gt " + path("g.jsonl")),
            0);
  ASSERT_EQ(run("postprocess --method seq-diou-nms --tau1 0.6 --tau2 0.5 --input " + path("d.jsonl") +
                " --output " + path("p.jsonl")),
            0);
  ASSERT_TRUE(fs::exists(path("p.jsonl")));
  std::string out;
  ASSERT_EQ(run("eval --dets " + path("p.jsonl") + " --gt " + path("g.jsonl"), &out), 0);
  EXPECT_NE(out.find("mAP 1.0000"), std::string::npos) << out;
  ASSERT_EQ(run("eval --csv --dets " + path("p.jsonl") + " --gt " + path("g.jsonl"), &out), 0);
  EXPECT_EQ(out.substr(0, out.find('\n')), "class_id,num_gt,num_dets,true_positives,ap");
  EXPECT_NE(out.find("mAP,,,,1.000000"), std::string::npos) << out;
}

TEST_F(Cli, EndToEndDeterminism) {
  write("spec.json", kNoisy);
  for (const char* run_id : {"a", "b"}) {
    const std::string r = run_id;
    ASSERT_EQ(run("synth --seed 7 --spec " + path("spec.json") + " --out-dets " + path(r + "d") +
                  " --out-gt " + path(r + "g")),
              0);
    for (const char* method : {"nms", "diou-nms", "seq-nms", "seq-diou-nms"}) {
      const std::string m = method;
      ASSERT_EQ(run("postprocess --method " + m + " --input " + path(r + "d") + " --output " + path(r + m)), 0);
      std::string out;
      ASSERT_EQ(run("eval --csv --dets " + path(r + m) + " --gt " + path(r + "g"), &out), 0);
      write(r + m + ".csv", out);
    }
  }
  for (const char* f : {"d", "g", "nms", "diou-nms", "seq-nms", "seq-diou-nms", "seq-diou-nms.csv"}) {
    EXPECT_EQ(slurp(path(std::string("a") + f)), slurp(path(std::string("b") + f))) << f;
  }
  EXPECT_FALSE(slurp(path("aseq-diou-nms")).empty());
}

TEST_F(Cli, PostprocessToStdout) {
  write("spec.json", kNoiseless);
  ASSERT_EQ(run("synth --seed 1 --spec " + path("spec.json") + " --out-dets " + path("d") + " --out-gt " +
                path("g")),
            0);
  std::string out;
  ASSERT_EQ(run("postprocess --input " + path("d"), &out), 0);
  EXPECT_EQ(out, slurp(path("d")));
}

TEST_F(Cli, ValidationErrorsExitOne) {
  write("bad.jsonl",
        R"({"video_id":"a","frame_idx":0,"detections":[{"box":[0,0,1,1],"class_id":0,"confidence":1.5}]})"
        "\n");
  std::string out, err;
  EXPECT_EQ(run("postprocess --input " + path("bad.jsonl"), &out, &err), 1);
  EXPECT_TRUE(out.empty());
  EXPECT_NE(err.find("confidence"), std::string::npos) << err;
  write("spec.json", R"({"num_frames": 0, "objects": []})");
  EXPECT_EQ(run("synth --seed 1 --spec " + path("spec.json") + " --out-dets " + path("d") + " --out-gt " +
                path("g")),
            1);
  EXPECT_EQ(run("postprocess --method bogus --input " + path("bad.jsonl")), 1);
}

TEST_F(Cli, OfaCheck) {
  std::string out;
  EXPECT_EQ(run("ofa-check --seed 3 --n 4 --d 8", &out), 0);
  EXPECT_NE(out.find("status=ok"), std::string::npos) << out;
  EXPECT_NE(out.find("permutation_residual=0.000000e+00"), std::string::npos) << out;
  EXPECT_EQ(run("ofa-check --seed 3 --n 5 --d 6 --stop-gradient --reducer gcp", &out), 0);
  EXPECT_EQ(run("ofa-check --seed 3 --n 12 --d 8"), 1);
  EXPECT_EQ(run("ofa-check --seed 3 --d 7"), 1);
}
