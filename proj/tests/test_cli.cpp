#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "cptchoice/io.hpp"

using namespace cptchoice;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cptchoice");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("cptchoice-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("simulate writes the session log") {
  const auto r = run({"simulate", "--agent", "always-ha2", "--seed", "1"});
  REQUIRE(r.code == cli::kOk);
  std::istringstream in(r.out);
  const auto logs = read_session_jsonl(in);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].participant_id == "sim");
  CHECK(logs[0].trials.size() == 100);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 100);
  // identical bytes for identical arguments
  CHECK(run({"simulate", "--agent", "always-ha2", "--seed", "1"}).out == r.out);
  CHECK(run({"simulate", "--agent", "always-ha2", "--seed", "2"}).out != r.out);
}

TEST_CASE("simulate agents and options") {
  auto r = run({"simulate", "--agent", "cpt", "--theta", "0.67,0.53,1.30,9.21", "--order", "descending", "--participant", "P06",
                "--rounds", "1"});
  REQUIRE(r.code == cli::kOk);
  std::istringstream in(r.out);
  const auto logs = read_session_jsonl(in);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].participant_id == "P06");
  CHECK(logs[0].trials.front().p_r == 0.9);
  CHECK(logs[0].trials.back().round == 1);
  CHECK(run({"simulate", "--agent", "blr", "--theta", "-2.61,4.77"}).code == cli::kOk);
  CHECK(run({"simulate", "--agent", "threshold", "--theta", "0.5"}).code == cli::kOk);
  CHECK(run({"simulate", "--agent", "always-ha1", "--order", "randomized"}).code == cli::kOk);
}

TEST_CASE("config in and out") {
  TempDir tmp;
  const auto cfg_out = (tmp.path / "cfg.json").string();
  auto r = run({"simulate", "--agent", "always-ha2", "--config-out", cfg_out, "--out", (tmp.path / "a.jsonl").string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.empty());
  CHECK(read_config(cfg_out).successes_per_block == 10);
  {
    std::ofstream f(tmp.path / "small.json");
    f << R"({"levels": [0.2, 0.8], "successesPerBlock": 3})";
  }
  r = run({"simulate", "--agent", "always-ha2", "--config", (tmp.path / "small.json").string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 2 * 2 * 3);
  {
    std::ofstream f(tmp.path / "bad.json");
    f << R"({"levels": [0.2], "bogus": 1})";
  }
  r = run({"simulate", "--agent", "always-ha2", "--config", (tmp.path / "bad.json").string()});
  CHECK(r.code == cli::kRuntimeError);
  CHECK(r.err.find("bogus") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == cli::kUsageError);
  CHECK(run({"simulate"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "bogus"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "cpt"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "cpt", "--theta", "1,2"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "cpt", "--theta", "1,x,1,1"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "always-ha2", "--order", "sideways"}).code == cli::kUsageError);
  CHECK(run({"simulate", "--agent", "always-ha2", "--seed", "abc"}).code == cli::kUsageError);
  CHECK(run({"fit", "--in", "x.jsonl"}).code == cli::kUsageError);
  CHECK(run({"nonsense"}).code == cli::kUsageError);
  const auto help = run({"--help"});
  CHECK(help.code == cli::kOk);
  CHECK(help.out.find("simulate") != std::string::npos);
}

TEST_CASE("fit writes per-participant files") {
  TempDir tmp;
  const auto log = (tmp.path / "p.jsonl").string();
  REQUIRE(run({"simulate", "--agent", "always-ha2", "--participant", "P08", "--out", log}).code == cli::kOk);
  const auto out_dir = tmp.path / "fits";
  const auto r = run({"fit", "--in", log, "--out", out_dir.string(), "--warmup", "300", "--samples", "300"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.rfind("P08: C=0.01 beta0=10 cluster=AlwaysCompensate", 0) == 0);
  const auto doc = Json::parse(slurp(out_dir / "P08.json"));
  CHECK(doc["cptFit"]["params"]["C"] == 0.01);
  CHECK(doc["blrMap"]["beta0"] == 10.0);
  CHECK(doc["blrPosterior"].is_object());
  const auto cpt_csv = slurp(out_dir / "P08_cpt.csv");
  CHECK(cpt_csv.rfind("p_r,p2\n", 0) == 0);
  CHECK(std::count(cpt_csv.begin(), cpt_csv.end(), '\n') == 102);
  CHECK(fs::exists(out_dir / "P08_blr.csv"));

  const auto quick = run({"fit", "--in", log, "--out", out_dir.string(), "--no-posterior", "--rmse-pooled"});
  REQUIRE(quick.code == cli::kOk);
  CHECK(Json::parse(slurp(out_dir / "P08.json"))["blrPosterior"].is_null());
  CHECK(run({"fit", "--in", log, "--out", out_dir.string(), "--starts", "0"}).code == cli::kUsageError);
}

TEST_CASE("fit runtime errors") {
  TempDir tmp;
  { std::ofstream(tmp.path / "empty.jsonl"); }
  auto r = run({"fit", "--in", (tmp.path / "empty.jsonl").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == cli::kRuntimeError);
  CHECK(r.err.find("no trials in") != std::string::npos);
  {
    std::ofstream f(tmp.path / "bad.jsonl");
    f << R"({"participant_id":"x","block":1})" << '\n';
  }
  r = run({"fit", "--in", (tmp.path / "bad.jsonl").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == cli::kRuntimeError);
  CHECK(r.err.find("bad.jsonl:1: missing field 'round'") != std::string::npos);
  r = run({"fit", "--in", (tmp.path / "missing.jsonl").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == cli::kRuntimeError);
}

TEST_CASE("analyze reports every participant") {
  TempDir tmp;
  const auto a = (tmp.path / "a.jsonl").string(), b = (tmp.path / "b.jsonl").string();
  REQUIRE(run({"simulate", "--agent", "always-ha2", "--participant", "A", "--out", a}).code == cli::kOk);
  REQUIRE(run({"simulate", "--agent", "cpt", "--theta", "0.67,0.53,1.30,9.21", "--participant", "B", "--seed", "5", "--out", b}).code ==
          cli::kOk);
  const auto csv = (tmp.path / "table.csv").string();
  const auto r = run({"analyze", "--in", a, "--in", b, "--csv", csv});
  REQUIRE(r.code == cli::kOk);
  const auto doc = Json::parse(r.out);
  REQUIRE(doc["participants"].size() == 2);
  CHECK(doc["participants"][0]["cluster"] == "AlwaysCompensate");
  CHECK(doc["participants"][1]["cluster"] == "TradeOff");
  const auto& pooled = doc["participants"][1]["pooled"];
  REQUIRE(pooled.size() == 5);
  // the steep agent's pooled curve trends upward
  CHECK(pooled[0]["p2"].get<double>() < pooled[4]["p2"].get<double>());
  CHECK(doc["participants"][0]["empirical"].size() == 10);
  const auto table = slurp(csv);
  CHECK(table.rfind("participant_id,round,p_r,trials,p2\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 21);
}

}  // TEST_SUITE
