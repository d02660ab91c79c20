#include <doctest.h>

#ifdef PTYFED_CLI

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "temp_dir.hpp"

using nlohmann::json;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string("'") + PTYFED_CLI + "' " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_deployment(const TempDir& tmp) {
  const json dep = {{"endpoints",
                     {{{"id", "bl"}, {"root", "bl"}, {"role", "beamline"}},
                      {{"id", "hpc"}, {"root", "hpc"}, {"role", "compute"}}}},
                    {"links",
                     {{{"src", "bl"}, {"dst", "hpc"}, {"bandwidth_bps", 1e9}, {"latency_s", 0.0}},
                      {{"src", "hpc"}, {"dst", "bl"}, {"bandwidth_bps", 1e9}, {"latency_s", 0.0}}}},
                    {"token", "t"}};
  std::ofstream(tmp / "dep.json") << dep.dump(2);
  return tmp / "dep.json";
}

const std::string kFlow = q(fs::path(PTYFED_SOURCE_DIR) / "flows/ptycho_flow.json");
const std::string kSmall = " --object-size 32 --probe-size 16 --step 8 ";

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("bogus").code == 2);
  CHECK(run("--help").code == 0);
  TempDir tmp;
  CHECK(run("generate --step 20 --probe-size 16 --out " + q(tmp / "d")).code == 2);
  CHECK(run("generate --kind moon --out " + q(tmp / "d")).code == 2);
  CHECK(run("reconstruct --dataset " + q(tmp / "nothing") + " --out " + q(tmp / "o")).code == 2);
  CHECK(run("report").code == 2);
}

TEST_CASE("cli: generate then reconstruct") {
  TempDir tmp;
  auto g = run("generate --kind coin --views 2" + kSmall + "--out " + q(tmp / "data"));
  REQUIRE(g.code == 0);
  CHECK(fs::exists(tmp / "data/scan1/meta.json"));
  CHECK(fs::exists(tmp / "data/scan2/frames.bin"));
  auto r = run("reconstruct --dataset " + q(tmp / "data/scan1") + " --iterations 5 --partitions 2 --out " +
               q(tmp / "rec"));
  CHECK(r.code == 0);
  CHECK(fs::exists(tmp / "rec/object.bin"));
  CHECK(r.output.find("5 iteration(s)") != std::string::npos);
}

TEST_CASE("cli: run-experiment, report and corruption") {
  TempDir tmp;
  REQUIRE(run("generate --views 2" + kSmall + "--out " + q(tmp / "data")).code == 0);
  const auto dep = write_deployment(tmp);
  const auto base = "run-experiment --deployment " + q(dep) + " --flow " + kFlow + " --dataset " + q(tmp / "data") +
                    " --iterations 3 --interval 0.05 ";

  auto ok = run(base + "--out " + q(tmp / "out"));
  CHECK(ok.code == 0);
  CHECK(ok.output.find("2/2 runs succeeded and verified") != std::string::npos);
  const auto csv = slurp(tmp / "out/breakdown.csv");
  CHECK(csv.rfind("run_id,incoming_s,compute_s,outgoing_s,others_s,total_s\n", 0) == 0);
  CHECK(csv.find("batch,") != std::string::npos);

  auto rep = run("report --batch --journal " + q(tmp / "out/journal") + " --journal " + q(tmp / "out/tasks.jsonl") +
                 " --out " + q(tmp / "rep"));
  CHECK(rep.code == 0);
  CHECK(fs::exists(tmp / "rep/breakdown.csv"));

  auto bad = run(base + "--inject-corruption 2 --out " + q(tmp / "bad"));
  CHECK(bad.code == 1);
  CHECK(bad.output.find("FAILED") != std::string::npos);

  CHECK(run("run-experiment --deployment " + q(tmp / "nope.json") + " --flow " + kFlow + " --dataset " +
            q(tmp / "data") + " --out " + q(tmp / "x"))
            .code == 2);
}

TEST_CASE("cli: scaling report") {
  TempDir tmp;
  std::ofstream(tmp / "s.csv") << "n,time_s\n1,100\n2,64.1\n4,53.2\n";
  auto r = run("report --scaling " + q(tmp / "s.csv") + " --out " + q(tmp / "o"));
  CHECK(r.code == 0);
  CHECK(slurp(tmp / "o/scaling.csv").find("2,64.100000,1.560062,0.780031") != std::string::npos);
  CHECK(fs::exists(tmp / "o/scaling.svg"));
  CHECK(run("report --scaling " + q(tmp / "s.csv") + " --base 8").code == 2);
}

TEST_CASE("cli: slot file commands") {
  TempDir tmp;
  const auto f = "--file " + q(tmp / "slots.json");
  CHECK(run("slots init " + f + " --node node-1 --count 2").code == 0);
  CHECK(run("slots acquire " + f + " --task a --count 2").code == 0);
  CHECK(run("slots acquire " + f + " --task b").code == 1);
  CHECK(run("slots release " + f + " --task a").code == 0);
  auto twice = run("slots release " + f + " --task a");
  CHECK(twice.code == 0);
  CHECK(twice.output.find("holds no slots") != std::string::npos);
  CHECK(run("slots acquire " + f + " --task c").code == 0);
  CHECK(run("slots repair " + f).output.find("freed 1") != std::string::npos);
  CHECK(run("slots status " + f).output.find("2 slot(s), 0 busy") != std::string::npos);
  CHECK(run("slots status --file " + q(tmp / "none.json")).code == 2);
}

#endif
