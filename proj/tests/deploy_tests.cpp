#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "hflow/deploy.hpp"
#include "support/harness.hpp"

using namespace hflow;
using testkit::TempDir;

namespace {

const char* kEnv = R"(deployments:
  controller:
    connector: local
    services:
      cpu:
        resources: 1
        slots: 4
  cluster:
    connector: sim-batch
    config:
      root: sites/cluster
      max_concurrent_jobs: 3
      submit_delay_ms: 5
      poll_interval_ms: 20
    services:
      gpu:
        resources: 4
        slots: 1
  vault:
    connector: sandbox
    config:
      root: /srv/vault
    services:
      worker:
        resources: 2
        slots: 2
bindings:
  - step: "*"
    target: cluster/gpu
  - step: summarize
    target: controller/cpu
    resources: 1
staging_dir: hub
)";

Workflow steps_named(const std::vector<std::string>& ids) {
  Workflow w;
  w.name = "t";
  for (const auto& id : ids) {
    Step s;
    s.id = id;
    s.command = "x";
    s.outputs.push_back({"out", PortKind::value, "stdout"});
    w.steps.push_back(std::move(s));
  }
  return w;
}

size_t no_locality(const std::string&, const ResourceRef&,
                   const std::vector<std::string>&) {
  return 0;
}

bool has_code(const std::vector<Diagnostic>& diags, const std::string& code) {
  for (const auto& d : diags)
    if (d.code == code) return true;
  return false;
}

}  // namespace

TEST_CASE("environment files parse into the deployment hierarchy") {
  const EnvironmentPlan plan = parse_environment(kEnv);
  REQUIRE(plan.models.size() == 3);
  CHECK(plan.models[0].kind == ConnectorKind::local);
  CHECK(plan.models[0].root.empty());
  const ModelDecl& cluster = plan.models[1];
  CHECK(cluster.kind == ConnectorKind::sim_batch);
  CHECK(cluster.root == "sites/cluster");
  CHECK(cluster.batch.max_concurrent_jobs == 3);
  CHECK(cluster.batch.submit_delay_ms == 5);
  CHECK(cluster.batch.poll_interval_ms == 20);
  REQUIRE(cluster.services.size() == 1);
  CHECK(cluster.services[0].resources == 4);
  CHECK(cluster.services[0].slots == 1);
  CHECK(plan.models[2].root == "/srv/vault");
  REQUIRE(plan.bindings.size() == 2);
  CHECK(plan.bindings[0].step_selector == "*");
  CHECK(plan.bindings[0].model == "cluster");
  CHECK(plan.bindings[0].service == "gpu");
  CHECK(plan.bindings[1].resources == 1);
  CHECK(plan.staging_dir == "hub");
}

TEST_CASE("environment serialization round-trips") {
  const EnvironmentPlan plan = parse_environment(kEnv);
  const std::string emitted = serialize_environment(plan);
  CHECK(serialize_environment(parse_environment(emitted)) == emitted);
  const EnvironmentPlan again = parse_environment(emitted);
  REQUIRE(again.models.size() == plan.models.size());
  CHECK(again.models[1].batch.max_concurrent_jobs == 3);
  CHECK(again.models[1].batch.submit_delay_ms == 5);
  CHECK(again.bindings.size() == plan.bindings.size());
  CHECK(again.staging_dir == plan.staging_dir);
}

TEST_CASE("environment schema is closed and checked") {
  CHECK_THROWS_AS(parse_environment("deployments: {}\nclusters: {}\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_environment("bindings: []\n"), ParseError);  // no deployments
  CHECK_THROWS_WITH_AS(
      parse_environment("deployments:\n  m:\n    connector: ssh\n"
                        "    services:\n      s: {resources: 1, slots: 1}\n"),
      doctest::Contains("connector must be local, sandbox or sim-batch"),
      ParseError);
  // sandbox and sim-batch cannot run without a site root
  CHECK_THROWS_WITH_AS(
      parse_environment("deployments:\n  m:\n    connector: sandbox\n"
                        "    services:\n      s: {resources: 1, slots: 1}\n"),
      doctest::Contains("requires 'root'"), ParseError);
  CHECK_THROWS_AS(
      parse_environment("deployments:\n  m:\n    connector: sim-batch\n"
                        "    services:\n      s: {resources: 1, slots: 1}\n"),
      ParseError);
  CHECK_THROWS_AS(
      parse_environment("deployments:\n  m:\n    connector: local\n"
                        "    services: {}\n"),
      ParseError);
  CHECK_THROWS_WITH_AS(
      parse_environment("deployments:\n  m:\n    connector: local\n"
                        "    services:\n      s: {resources: 0, slots: 1}\n"),
      doctest::Contains("must be >= 1"), ParseError);
  CHECK_THROWS_WITH_AS(
      parse_environment("deployments:\n  m:\n    connector: local\n"
                        "    services:\n      s: {resources: 1, slots: 1}\n"
                        "bindings:\n  - step: a\n    target: m\n"),
      doctest::Contains("must be 'model/service'"), ParseError);
  CHECK_THROWS_AS(
      parse_environment("deployments:\n  m:\n    connector: local\n"
                        "    services:\n      s: {resources: 1, slots: 1}\n"
                        "bindings:\n  - target: m/s\n"),
      ParseError);
}

TEST_CASE("binding validation covers totality and capacity") {
  const Workflow w = steps_named({"fetch", "train", "summarize"});
  EnvironmentPlan plan = parse_environment(kEnv);

  CHECK(validate_environment(w, plan).empty());

  SUBCASE("steps without a binding are named") {
    plan.bindings[0].step_selector = "t*";
    const auto diags = validate_environment(w, plan);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].code == "unbound-step");
    CHECK(diags[0].message == "step 'fetch' matches no binding");
    CHECK(diags[0].steps == std::vector<std::string>{"fetch"});
  }
  SUBCASE("unknown model") {
    plan.bindings[1].model = "nowhere";
    CHECK(has_code(validate_environment(w, plan), "unknown-target"));
  }
  SUBCASE("unknown service") {
    plan.bindings[1].service = "tpu";
    CHECK(has_code(validate_environment(w, plan), "unknown-target"));
  }
  SUBCASE("reservation larger than the service") {
    plan.bindings[1].resources = 2;  // controller/cpu has one resource
    const auto diags = validate_environment(w, plan);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].code == "oversubscribed");
  }
  SUBCASE("duplicate selectors") {
    plan.bindings.push_back(plan.bindings[1]);
    CHECK(has_code(validate_environment(w, plan), "duplicate-binding"));
  }
}

TEST_CASE("binding resolution: exact beats glob, later beats earlier") {
  const Workflow w = steps_named({"task", "tool", "misc", "other"});
  EnvironmentPlan plan;
  ModelDecl m;
  m.name = "m";
  m.services = {{"a", 1, 1}, {"b", 1, 1}, {"c", 1, 1}, {"d", 1, 1}};
  plan.models.push_back(m);
  plan.bindings = {
      {"other", "m", "d", 1},  // exact declared first still wins over globs
      {"*", "m", "a", 1},
      {"t*", "m", "b", 1},
      {"task", "m", "c", 1},
  };
  const auto bound = resolve_bindings(w, plan);
  CHECK(bound.at("task").service == "c");
  CHECK(bound.at("tool").service == "b");  // later glob beats earlier "*"
  CHECK(bound.at("misc").service == "a");
  CHECK(bound.at("other").service == "d");

  // an unbound step makes resolution throw
  plan.bindings = {{"task", "m", "c", 1}};
  CHECK_THROWS_WITH_AS(resolve_bindings(w, plan),
                       doctest::Contains("matches no binding"), Error);
}

TEST_CASE("deployment is lazy, single-flight and co-allocated") {
  TempDir tmp;
  ModelDecl m;
  m.name = "m";
  m.kind = ConnectorKind::local;
  m.root = (tmp.path() / "m").string();
  m.services = {{"s1", 1, 1}, {"s2", 2, 1}};

  std::atomic<int> built{0};
  Deployer deployer({m}, [&](const ModelDecl& decl) {
    built.fetch_add(1);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return std::make_unique<DirSiteConnector>("local", decl.root,
                                              decl.services);
  });
  CHECK(deployer.records().empty());  // nothing deployed yet

  std::vector<std::thread> threads;
  std::vector<Connector*> seen(8, nullptr);
  for (int i = 0; i < 8; ++i)
    threads.emplace_back(
        [&, i] { seen[i] = &deployer.ensure_deployed("m"); });
  for (auto& t : threads) t.join();

  CHECK(built.load() == 1);
  for (int i = 1; i < 8; ++i) CHECK(seen[i] == seen[0]);

  auto records = deployer.records();
  REQUIRE(records.size() == 1);
  CHECK(records[0].model == "m");
  CHECK_FALSE(records[0].undeployed);
  // one deploy brought up every service of the model
  REQUIRE(records[0].services.size() == 2);
  CHECK(records[0].services[0].service == "s1");
  CHECK(records[0].services[1].service == "s2");
  CHECK(records[0].deployed_at <= records[0].services[0].initialized_at);

  deployer.undeploy_all();
  records = deployer.records();
  CHECK(records[0].undeployed);
  CHECK(records[0].undeployed_at >= records[0].deployed_at);
}

TEST_CASE("a failed deploy stays failed and is reported to every caller") {
  ModelDecl m;
  m.name = "flaky";
  std::atomic<int> attempts{0};
  Deployer deployer({m}, [&](const ModelDecl&) -> std::unique_ptr<Connector> {
    attempts.fetch_add(1);
    throw std::runtime_error("no disk");
  });
  CHECK_THROWS_WITH_AS(deployer.ensure_deployed("flaky"),
                       "deploy of model 'flaky' failed: no disk", Error);
  CHECK_THROWS_AS(deployer.ensure_deployed("flaky"), Error);
  CHECK(attempts.load() == 1);  // sticky: no deploy storm
  CHECK(deployer.records().empty());
  CHECK_THROWS_AS(deployer.ensure_deployed("ghost"), Error);
}

TEST_CASE("scheduler accounts slots per resource") {
  ModelDecl m;
  m.name = "m";
  m.services = {{"s", 2, 2}};  // 2 resources × 2 slots
  Scheduler sched({m});
  std::atomic<bool> cancel{false};

  std::vector<Reservation> held;
  for (int i = 0; i < 4; ++i)
    held.push_back(sched.acquire("m", "s", 1, {}, no_locality, cancel));
  // all four slots are out; a fifth acquire must wait for a release
  std::atomic<bool> got_fifth{false};
  std::thread fifth([&] {
    const Reservation r = sched.acquire("m", "s", 1, {}, no_locality, cancel);
    got_fifth.store(true);
    sched.release(r);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  CHECK_FALSE(got_fifth.load());
  sched.release(held.back());
  held.pop_back();
  fifth.join();
  CHECK(got_fifth.load());
  for (const auto& r : held) sched.release(r);

  CHECK_THROWS_WITH_AS(
      sched.acquire("m", "nope", 1, {}, no_locality, cancel),
      doctest::Contains("unknown service"), Error);
  CHECK_THROWS_WITH_AS(sched.acquire("m", "s", 3, {}, no_locality, cancel),
                       doctest::Contains("exceeds service"), Error);
}

TEST_CASE("co-reservation takes the requested resources atomically") {
  ModelDecl m;
  m.name = "m";
  m.services = {{"s", 3, 1}};
  Scheduler sched({m});
  std::atomic<bool> cancel{false};

  const Reservation r = sched.acquire("m", "s", 2, {}, no_locality, cancel);
  REQUIRE(r.indices.size() == 2);
  CHECK(r.indices[0] != r.indices[1]);
  const Reservation r2 = sched.acquire("m", "s", 1, {}, no_locality, cancel);
  // the remaining resource is the one not co-reserved
  CHECK(std::count(r.indices.begin(), r.indices.end(), r2.indices[0]) == 0);
  sched.release(r);
  sched.release(r2);
}

TEST_CASE("the queue head may not be overtaken by smaller requests") {
  ModelDecl m;
  m.name = "m";
  m.services = {{"s", 2, 1}};
  Scheduler sched({m});
  std::atomic<bool> cancel{false};

  const Reservation a = sched.acquire("m", "s", 2, {}, no_locality, cancel);

  std::atomic<bool> b_done{false}, c_done{false};
  std::thread b([&] {
    const Reservation r = sched.acquire("m", "s", 2, {}, no_locality, cancel);
    b_done.store(true);
    sched.release(r);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  std::thread c([&] {
    const Reservation r = sched.acquire("m", "s", 1, {}, no_locality, cancel);
    c_done.store(true);
    sched.release(r);
  });

  // free one resource: c would fit, but b is at the head and needs both
  sched.release({a.model, a.service, {a.indices[0]}});
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  CHECK_FALSE(b_done.load());
  CHECK_FALSE(c_done.load());

  sched.release({a.model, a.service, {a.indices[1]}});
  b.join();
  c.join();
  CHECK(b_done.load());
  CHECK(c_done.load());
}

TEST_CASE("locality steers placement toward resources that hold the data") {
  ModelDecl m;
  m.name = "m";
  m.services = {{"s", 3, 1}};
  Scheduler sched({m});
  std::atomic<bool> cancel{false};
  // refs live on resource 1
  auto probe = [](const std::string&, const ResourceRef& r,
                  const std::vector<std::string>& ids) -> size_t {
    return r.index == 1 ? ids.size() : 0;
  };

  const Reservation one = sched.acquire("m", "s", 1, {"d1", "d2"}, probe,
                                        cancel);
  CHECK(one.indices == std::vector<uint32_t>{1});
  sched.release(one);

  // rank 0 is the data-local resource, the rest follow in index order
  const Reservation two = sched.acquire("m", "s", 3, {"d1"}, probe, cancel);
  CHECK(two.indices == std::vector<uint32_t>{1, 0, 2});
  sched.release(two);
}

TEST_CASE("cancellation unblocks a waiting acquire") {
  ModelDecl m;
  m.name = "m";
  m.services = {{"s", 1, 1}};
  Scheduler sched({m});
  std::atomic<bool> cancel{false};
  const Reservation held = sched.acquire("m", "s", 1, {}, no_locality, cancel);

  std::atomic<bool> threw{false};
  std::thread waiter([&] {
    try {
      sched.acquire("m", "s", 1, {}, no_locality, cancel);
    } catch (const Error& e) {
      threw.store(std::string(e.what()) == "cancelled");
    }
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  cancel.store(true);
  sched.cancel_waiters();
  waiter.join();
  CHECK(threw.load());
  sched.release(held);
}
