#include <doctest.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "ptyfed/clock.hpp"
#include "ptyfed/flow_definition.hpp"
#include "ptyfed/flow_engine.hpp"
#include "temp_dir.hpp"

using namespace ptyfed;
using namespace ptyfed::flow;
using nlohmann::json;
using testing_support::TempDir;

namespace {

const char* kTwoStep = R"({
  "id": "demo",
  "start_state": "A",
  "inputs": ["x"],
  "states": {
    "A": {"action_type": "transfer", "parameters": {"value": "$.input.x"}, "next": "B", "retries": 1, "timeout": 5},
    "B": {"action_type": "compute", "parameters": {"prev": "$.states.A.output.echo", "lit": 3}, "next": "END",
          "retries": 0, "timeout": 5}
  }
})";

// Scripted provider: fails the first `failures` attempts of each (run, state) pair.
class ScriptedProvider : public ActionProvider {
 public:
  std::atomic<int> calls{0};
  std::atomic<int> live{0};
  std::atomic<int> peak{0};
  int failures = 0;
  Outcome failure_kind = Outcome::retryable_failure;
  double sleep_s = 0.0;
  bool throw_instead = false;
  std::string poison_value;  // runs whose "value" equals this throw every time

  ActionResult invoke(const json& params, const InvokeContext& ctx) override {
    ++calls;
    const int now = ++live;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    if (sleep_s > 0) sleep_for(sleep_s, ctx.stop);
    --live;
    if (!poison_value.empty() && params.value("value", json()).dump() == poison_value) {
      throw std::runtime_error("poisoned input");
    }
    if (static_cast<int>(ctx.attempt) <= failures) {
      if (throw_instead) throw std::runtime_error("provider crashed");
      return {failure_kind, json::object(), "scripted failure"};
    }
    json out = params;
    out["echo"] = params.value("value", json());
    out["attempt_id"] = ctx.attempt_id;
    return {Outcome::success, out, {}};
  }
};

struct Fixture {
  std::shared_ptr<ScriptedProvider> transfer = std::make_shared<ScriptedProvider>();
  std::shared_ptr<ScriptedProvider> compute = std::make_shared<ScriptedProvider>();
  FlowDefinition def = parse_definition(kTwoStep);

  void attach(FlowEngine& engine) {
    engine.register_provider(ActionType::transfer, transfer);
    engine.register_provider(ActionType::compute, compute);
  }
};

std::vector<std::string> violations_of(const std::string& text) {
  try {
    parse_definition(text);
  } catch (const FlowValidationError& e) {
    return e.violations();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("shipped ptychography flow validates") {
  const auto def = load_definition(std::filesystem::path(PTYFED_SOURCE_DIR) / "flows/ptycho_flow.json");
  CHECK(def.states.size() == 3);
  CHECK(def.path() == std::vector<std::string>{"TransferIn", "Reconstruct", "TransferOut"});
  CHECK(def.state("Reconstruct").action_type == ActionType::compute);
  CHECK(def.state("Reconstruct").timeout == 3600.0);
  const auto round = definition_from_json(def.to_json());
  CHECK(round.path() == def.path());
}

TEST_CASE("validation names the offending state") {
  auto doc = json::parse(kTwoStep);
  doc["states"]["A"]["next"] = "reconX";
  const auto v = violations_of(doc.dump());
  REQUIRE_FALSE(v.empty());
  CHECK(any_contains(v, "'A'"));
  CHECK(any_contains(v, "reconX"));

  auto empty = json::parse(kTwoStep);
  empty["states"] = json::object();
  CHECK_FALSE(violations_of(empty.dump()).empty());

  auto cyc = json::parse(kTwoStep);
  cyc["states"]["B"]["next"] = "A";
  CHECK(any_contains(violations_of(cyc.dump()), "cycle"));

  auto bad_type = json::parse(kTwoStep);
  bad_type["states"]["B"]["action_type"] = "email";
  CHECK(any_contains(violations_of(bad_type.dump()), "'B'"));

  auto undeclared = json::parse(kTwoStep);
  undeclared["states"]["A"]["parameters"]["y"] = "$.input.y";
  CHECK(any_contains(violations_of(undeclared.dump()), "'y'"));

  auto forward_ref = json::parse(kTwoStep);
  forward_ref["states"]["A"]["parameters"]["later"] = "$.states.B.output.echo";
  CHECK_FALSE(violations_of(forward_ref.dump()).empty());

  auto unknown_ref = json::parse(kTwoStep);
  unknown_ref["states"]["B"]["parameters"]["z"] = "$.states.Q.output.k";
  CHECK(any_contains(violations_of(unknown_ref.dump()), "Q"));

  auto several = json::parse(kTwoStep);
  several["states"]["A"]["next"] = "nowhere";
  several["states"]["B"]["action_type"] = "email";
  CHECK(violations_of(several.dump()).size() >= 2);

  CHECK_THROWS_AS(parse_definition("{ not json"), ConfigError);
  CHECK_THROWS_AS(load_definition("/nonexistent/flow.json"), IoError);
}

TEST_CASE("templates substitute whole string values") {
  const json params = {{"a", "$.input.x"}, {"nested", {{"b", "$.states.S.output.v"}, {"c", "plain $.input.x"}}},
                       {"list", {"$.input.n", 1}}};
  const json input = {{"x", "hello"}, {"n", 7}};
  const json outputs = {{"S", {{"v", {1, 2}}}}};
  const auto r = render_parameters(params, input, outputs);
  CHECK(r["a"] == "hello");
  CHECK(r["nested"]["b"] == json({1, 2}));
  CHECK(r["nested"]["c"] == "plain $.input.x");
  CHECK(r["list"][0] == 7);
  CHECK_THROWS_AS(render_parameters({{"a", "$.input.missing"}}, input, outputs), ConfigError);
  CHECK_THROWS_AS(render_parameters({{"a", "$.states.T.output.v"}}, input, outputs), ConfigError);
}

TEST_CASE("runs execute states in order and chain outputs") {
  Fixture f;
  FlowEngine engine;
  f.attach(engine);
  const auto id = engine.start_run(f.def, {{"x", "payload"}});
  const auto run = engine.await_run(id);
  CHECK(run.status == RunStatus::succeeded);
  REQUIRE(run.state_log.size() == 2);
  CHECK(run.state_log[0].state == "A");
  CHECK(run.state_log[0].next == "B");
  CHECK(run.state_log[1].output["prev"] == "payload");
  CHECK(run.state_log[1].output["lit"] == 3);
  CHECK(run.state_log[1].attempt_id == id + "/B/1");
  CHECK(run.state_log[0].finished <= run.state_log[1].started);
}

TEST_CASE("run ids are distinct and follow the flow id") {
  Fixture f;
  FlowEngine engine;
  f.attach(engine);
  std::set<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.insert(engine.start_run(f.def, {{"x", i}}));
  CHECK(ids.size() == 20);
  CHECK(*ids.begin() == "demo-000001");
  for (const auto& id : ids) CHECK(engine.await_run(id).status == RunStatus::succeeded);
  CHECK_THROWS_AS(engine.await_run("demo-999999"), ConfigError);
  CHECK_THROWS_AS(engine.run("nope"), ConfigError);
}

TEST_CASE("missing input keys fail the run before any state") {
  Fixture f;
  FlowEngine engine;
  f.attach(engine);
  const auto id = engine.start_run(f.def, json::object());
  const auto run = engine.await_run(id);
  CHECK(run.status == RunStatus::failed);
  CHECK(run.error.find("'x'") != std::string::npos);
  CHECK(run.state_log.empty());
  CHECK(f.transfer->calls == 0);
}

TEST_CASE("one retryable failure is retried once") {
  Fixture f;
  f.transfer->failures = 1;
  FlowEngine engine;
  f.attach(engine);
  const auto run = engine.await_run(engine.start_run(f.def, {{"x", 1}}));
  CHECK(run.status == RunStatus::succeeded);
  REQUIRE(run.state_log.size() == 3);
  CHECK(run.state_log[0].outcome == Outcome::retryable_failure);
  CHECK(run.state_log[1].attempt == 2);
  CHECK(run.state_log[1].outcome == Outcome::success);
  CHECK(run.state_log[0].attempt_id != run.state_log[1].attempt_id);
}

TEST_CASE("exhausted retries fail the run and skip later states") {
  Fixture f;
  f.transfer->failures = 5;
  FlowEngine engine;
  f.attach(engine);
  const auto run = engine.await_run(engine.start_run(f.def, {{"x", 1}}));
  CHECK(run.status == RunStatus::failed);
  CHECK(run.state_log.size() == 2);  // retries = 1
  CHECK(f.compute->calls == 0);
  CHECK(run.error.find("'A'") != std::string::npos);
}

TEST_CASE("provider exceptions are retryable, fatal outcomes are not") {
  SUBCASE("throw") {
    Fixture f;
    f.transfer->failures = 1;
    f.transfer->throw_instead = true;
    FlowEngine engine;
    f.attach(engine);
    CHECK(engine.await_run(engine.start_run(f.def, {{"x", 1}})).status == RunStatus::succeeded);
    CHECK(f.transfer->calls == 2);
  }
  SUBCASE("fatal") {
    Fixture f;
    f.transfer->failures = 1;
    f.transfer->failure_kind = Outcome::fatal;
    FlowEngine engine;
    f.attach(engine);
    CHECK(engine.await_run(engine.start_run(f.def, {{"x", 1}})).status == RunStatus::failed);
    CHECK(f.transfer->calls == 1);
  }
}

TEST_CASE("overrunning attempts count as timeouts") {
  auto doc = json::parse(kTwoStep);
  doc["states"]["A"]["timeout"] = 0.05;
  doc["states"]["A"]["retries"] = 0;
  Fixture f;
  f.def = definition_from_json(doc);
  f.transfer->sleep_s = 0.15;
  FlowEngine engine;
  f.attach(engine);
  const auto run = engine.await_run(engine.start_run(f.def, {{"x", 1}}));
  CHECK(run.status == RunStatus::failed);
  REQUIRE(run.state_log.size() == 1);
  CHECK(run.state_log[0].message.find("timed out") != std::string::npos);
}

TEST_CASE("168 concurrent runs all complete within the executor cap") {
  Fixture f;
  f.transfer->sleep_s = 0.05;
  EngineConfig cfg;
  cfg.max_concurrent_runs = 64;
  FlowEngine engine(cfg);
  f.attach(engine);
  std::vector<std::string> ids;
  const double start = wall_seconds();
  for (int i = 0; i < 168; ++i) ids.push_back(engine.start_run(f.def, {{"x", i}}));
  for (const auto& id : ids) {
    const auto run = engine.await_run(id);
    CHECK(run.status == RunStatus::succeeded);
    double sum = 0.0;
    for (const auto& s : run.state_log) sum += s.finished - s.started;
    CHECK(sum <= run.finished - run.started + 1e-6);
  }
  CHECK(f.transfer->peak <= 64);
  CHECK(f.transfer->peak > 1);
  // Serial execution would need 168 x 0.05 s.
  CHECK(wall_seconds() - start < 168 * 0.05 / 2);
}

TEST_CASE("a failing run does not disturb its neighbours") {
  Fixture f;
  f.transfer->poison_value = "13";
  f.transfer->sleep_s = 0.01;
  FlowEngine engine;
  f.attach(engine);
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back(engine.start_run(f.def, {{"x", i}}));
  for (int i = 0; i < 20; ++i) {
    const auto run = engine.await_run(ids[i]);
    CHECK(run.status == (i == 13 ? RunStatus::failed : RunStatus::succeeded));
    for (const auto& s : run.state_log) CHECK(s.attempt_id.rfind(ids[i] + "/", 0) == 0);
  }
}

TEST_CASE("per-run journals hold state and run records") {
  TempDir tmp;
  Fixture f;
  f.transfer->failures = 1;
  EngineConfig cfg;
  cfg.journal_dir = tmp.path();
  FlowEngine engine(cfg);
  f.attach(engine);
  const auto id = engine.start_run(f.def, {{"x", 1}});
  engine.await_run(id);
  std::ifstream in(tmp / (id + ".jsonl"));
  REQUIRE(in);
  std::vector<json> records;
  for (std::string line; std::getline(in, line);) records.push_back(json::parse(line));
  REQUIRE(records.size() == 4);
  CHECK(records[0]["type"] == "state");
  CHECK(records[0]["outcome"] == "retryable_failure");
  CHECK(records[0]["run_id"] == id);
  CHECK(records[3]["type"] == "run");
  CHECK(records[3]["status"] == "succeeded");
}

TEST_CASE("cancel fails pending and running runs") {
  Fixture f;
  f.transfer->sleep_s = 10.0;
  EngineConfig cfg;
  cfg.max_concurrent_runs = 1;
  FlowEngine engine(cfg);
  f.attach(engine);
  const auto a = engine.start_run(f.def, {{"x", 1}});
  const auto b = engine.start_run(f.def, {{"x", 2}});
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  const double start = wall_seconds();
  engine.cancel_all();
  CHECK(engine.await_run(a).status == RunStatus::failed);
  CHECK(engine.await_run(b).status == RunStatus::failed);
  CHECK(wall_seconds() - start < 2.0);
  CHECK(engine.await_run(engine.start_run(f.def, {{"x", 3}})).status == RunStatus::failed);
}

TEST_CASE("missing provider is fatal") {
  Fixture f;
  FlowEngine engine;
  engine.register_provider(ActionType::transfer, f.transfer);
  const auto run = engine.await_run(engine.start_run(f.def, {{"x", 1}}));
  CHECK(run.status == RunStatus::failed);
  CHECK(run.state_log.size() == 2);
}
