#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "lfd_cli_test";

struct Result {
  int code;
  std::string out;
};

Result lfd(const std::string& args, const std::string& env = "") {
  const auto out = kWork / "stdout.txt";
  const std::string cmd = "cd " + kWork.string() + " && " + env + " " + LFD_BIN + " " + args + " > " + out.string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string stderr_text() {
  std::ifstream f(kWork / "stderr.txt");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read(const fs::path& p) {
  std::ifstream f(kWork / p);
  return json::parse(f);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(kWork / p) << text; }

// Shared small dataset and models, built once.
struct Fixture {
  Fixture() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    REQUIRE(lfd("collect-demos --out demos --per-combo 1 --frame-period 4 --seed 3").code == 0);
    REQUIRE(lfd("train-dcae --data demos --out dcae.lfdm --epochs 2 --seed 4").code == 0);
    REQUIRE(lfd("train-rnn --data demos --dcae dcae.lfdm --out rnn.lfdm --iterations 5 --seed 4").code == 0);
  }
};

void ensure_fixture() { static Fixture f; }

}  // namespace

TEST_CASE("usage errors exit with 2") {
  ensure_fixture();
  CHECK(lfd("").code == 2);
  CHECK(lfd("fly").code == 2);
  CHECK(lfd("reproduce exp9").code == 2);
  CHECK(lfd("train-dcae --out x.lfdm").code == 2);  // no data
  CHECK(lfd("--help").code == 0);
}

TEST_CASE("collect-demos writes the requested sequences") {
  ensure_fixture();
  const auto m = read("demos/manifest.json");
  CHECK(m["sequences"].size() == 4);
  CHECK(lfd("collect-demos --out two --positions 2,4 --per-combo 1 --frame-period 6").code == 0);
  CHECK(read("two/manifest.json")["sequences"].size() == 8);
  CHECK(lfd("collect-demos --out bad --positions 9").code == 2);
  CHECK(lfd("collect-demos --out far --bowl-x 5.0 --per-combo 1").code == 2);
  CHECK(stderr_text().find("failed") != std::string::npos);
}

TEST_CASE("training writes a model and one loss per epoch or iteration") {
  ensure_fixture();
  CHECK(read("dcae.loss.json").size() == 2);
  CHECK(read("rnn.loss.json").size() == 5);
  const auto r = lfd("train-dcae --data demos --out again.lfdm --epochs 2 --seed 4");
  REQUIRE(r.code == 0);
  const auto first = lfd("train-dcae --data demos --out once.lfdm --epochs 2 --seed 4");
  CHECK(json::parse(r.out)["hash"] == json::parse(first.out)["hash"]);
  const auto other = lfd("train-dcae --data demos --out other.lfdm --epochs 2 --seed 5");
  CHECK(json::parse(other.out)["hash"] != json::parse(first.out)["hash"]);
}

TEST_CASE("divergent training exits with 3") {
  ensure_fixture();
  CHECK(lfd("train-dcae --data demos --out nan.lfdm --epochs 20 --lr 1e30").code == 3);
  CHECK(lfd("train-rnn --data demos --dcae dcae.lfdm --out nan.lfdm --iterations 20 --lr 1e300").code == 3);
}

TEST_CASE("rollout validates before running and reports a verdict") {
  ensure_fixture();
  const auto ok = lfd("rollout --dcae dcae.lfdm --rnn rnn.lfdm --bowl-x 0.2 --steps 4 --out traj");
  REQUIRE(ok.code == 0);
  const auto j = json::parse(ok.out);
  CHECK(j["report"].contains("success"));
  CHECK(j["report"]["frames"] == 5);
  CHECK(read("traj/manifest.json")["sequences"][0]["source"] == "rollout");
  CHECK(lfd("rollout --dcae dcae.lfdm --rnn rnn.lfdm --steps 0").code == 2);
  CHECK(lfd("rollout --dcae rnn.lfdm --rnn rnn.lfdm --steps 3").code == 2);
  CHECK(lfd("rollout --dcae dcae.lfdm --rnn rnn.lfdm --bowl-x 3.0").code == 2);

  // a recurrent net built for another code size is refused
  write("wide.json", R"({"rnn": {"feature_dim": 12}, "dcae": {"fc_sizes": [100, 12]}})");
  REQUIRE(lfd("--config wide.json train-dcae --data demos --out wide_dcae.lfdm --epochs 1").code == 0);
  REQUIRE(lfd("train-rnn --data demos --dcae wide_dcae.lfdm --out wide_rnn.lfdm --iterations 2").code == 0);
  CHECK(lfd("rollout --dcae dcae.lfdm --rnn wide_rnn.lfdm --steps 3").code == 2);
  CHECK(stderr_text().find("features") != std::string::npos);
}

TEST_CASE("encode and eval-recon read saved models and datasets") {
  ensure_fixture();
  REQUIRE(lfd("encode --dcae dcae.lfdm --data demos --out feats.json").code == 0);
  const auto f = read("feats.json");
  CHECK(f["sequences"].size() == 4);
  CHECK(f["sequences"][0]["features"][0].size() == 10);
  const auto ev = lfd("eval-recon --dcae dcae.lfdm --data demos");
  REQUIRE(ev.code == 0);
  CHECK(json::parse(ev.out)["datasets"]["demos"]["mse"].get<double>() > 0.0);
  CHECK(lfd("eval-recon --dcae dcae.lfdm --data nowhere").code == 2);
  write("corrupt.lfdm", "LFDX");
  CHECK(lfd("eval-recon --dcae corrupt.lfdm --data demos").code == 2);
  CHECK(stderr_text().find("bad magic") != std::string::npos);
}

TEST_CASE("seed precedence: flag, then config, then LFD_SEED") {
  ensure_fixture();
  write("tiny.json",
        R"({"sequences_per_combo": 1, "rollouts": 1, "rollout_steps": 3, "dcae_frame_stride": 10,
            "dcae": {"epochs": 1}, "rnn": {"iterations": 2}})");
  REQUIRE(lfd("--config tiny.json reproduce exp1 --out env_run", "LFD_SEED=77").code == 0);
  CHECK(read("env_run/report.json")["seeds"]["base"] == 77);
  write("seeded.json",
        R"({"seed": 12, "sequences_per_combo": 1, "rollouts": 1, "rollout_steps": 3, "dcae_frame_stride": 10,
            "dcae": {"epochs": 1}, "rnn": {"iterations": 2}})");
  REQUIRE(lfd("--config seeded.json reproduce exp1 --out cfg_run", "LFD_SEED=77").code == 0);
  CHECK(read("cfg_run/report.json")["seeds"]["base"] == 12);
  REQUIRE(lfd("--config seeded.json reproduce exp1 --out flag_run --seed 5 --rollouts 2", "LFD_SEED=77").code == 0);
  const auto r = read("flag_run/report.json");
  CHECK(r["seeds"]["base"] == 5);
  CHECK(r["matrix"]["cells"]["A1_s1"]["s1"]["trials"] == 2);
  CHECK(lfd("reproduce exp1 --out x", "LFD_SEED=abc").code == 2);
  write("unknown.json", R"({"epoch": 3})");
  CHECK(lfd("--config unknown.json reproduce exp1").code == 2);
}
