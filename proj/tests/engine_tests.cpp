#include <doctest.h>

#include "hflow/deploy.hpp"
#include "support/harness.hpp"
#include "support/validators.hpp"

using namespace hflow;
using testkit::json;

namespace {

const char* kLocalEnv = R"(deployments:
  box:
    connector: local
    services:
      main:
        resources: 2
        slots: 2
bindings:
  - step: "*"
    target: box/main
)";

const char* kSplitEnv = R"(deployments:
  east:
    connector: sandbox
    config:
      root: sites/east
    services:
      main:
        resources: 1
        slots: 2
  west:
    connector: sandbox
    config:
      root: sites/west
    services:
      main:
        resources: 1
        slots: 2
bindings:
  - step: "*"
    target: east/main
  - step: consume
    target: west/main
)";

// Expected artifacts of `hflow-stub mix`, computed from first principles.
std::string mix_digest(const std::string& trace) {
  return hex64(fnv1a64(trace));
}
std::string mix_file(const std::string& trace) {
  return "mix=" + mix_digest(trace) + "\n" + trace;
}
std::string fingerprint(const std::string& content) {
  return hex64(fnv1a64(content)) + ":" + std::to_string(content.size());
}

const json* find_instance(const json& report, const std::string& step,
                          const json& tag = json::array()) {
  for (const auto& inst : report.at("instances"))
    if (inst.at("instance").at("step") == step &&
        inst.at("instance").at("tag") == tag)
      return &inst;
  return nullptr;
}

void expect_clean(const testkit::EngineRun& run, const std::string& env_yaml) {
  const EnvironmentPlan plan = parse_environment(env_yaml);
  for (const auto& v :
       testkit::check_report(run.report, plan, run.staging_root))
    FAIL_CHECK(v);
}

}  // namespace

TEST_CASE("a linear pipeline runs to completion with exact artifacts") {
  const char* wf = R"(name: linear
inputs:
  greeting:
    type: value
    default: hello
steps:
  - id: gen
    command: hflow-stub echo --text {greeting}
    in:
      greeting:
        from: inputs.greeting
        type: value
    out:
      msg:
        type: value
  - id: pack
    command: hflow-stub mix --label pack --arg {msg} --out {outdir}/pack.dat
    in:
      msg:
        from: gen.msg
        type: value
    out:
      bundle:
        type: file
        capture: pack.dat
outputs:
  bundle: pack.bundle
  note: gen.msg
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  REQUIRE(run.outcome.success);
  CHECK(run.outcome.errors.empty());
  CHECK(run.report.at("run").at("status") == "success");

  const std::string trace = "label=pack\narg=hello\n";
  CHECK(testkit::read_file(run.outdir / "outputs" / "bundle") ==
        mix_file(trace));
  CHECK(testkit::read_file(run.outdir / "outputs" / "note") == "hello");

  REQUIRE(run.report.at("instances").size() == 2);
  const json* pack = find_instance(run.report, "pack");
  REQUIRE(pack);
  CHECK(pack->at("state") == "done");
  CHECK(pack->at("exit_code") == 0);
  CHECK(pack->at("attempts") == 1);
  CHECK(pack->at("binding").at("model") == "box");
  CHECK(pack->at("binding").at("service") == "main");
  CHECK(pack->at("outputs") == json::array({"pack.bundle"}));

  const auto& outs = run.report.at("outputs");
  CHECK(outs.at("bundle") == "outputs/bundle");
  CHECK(outs.at("note") == "outputs/note");
  expect_clean(run, kLocalEnv);
}

TEST_CASE("scatter fans out and the gathered values arrive as a list") {
  const char* wf = R"(name: fan
inputs:
  items:
    type: value
    default: [a, b, c]
steps:
  - id: work
    command: hflow-stub mix --label w --arg {item}
    in:
      item:
        from: inputs.items
        type: value
    out:
      digest:
        type: value
    scatter: [item]
  - id: merge
    command: hflow-stub mix --label m --arg {all}
    in:
      all:
        from: work.digest
        type: value
    out:
      digest:
        type: value
outputs:
  final: merge.digest
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  REQUIRE(run.outcome.success);

  json gathered = json::array();
  for (const char* item : {"a", "b", "c"})
    gathered.push_back(mix_digest(std::string("label=w\narg=") + item + "\n"));
  const std::string expected =
      mix_digest("label=m\narg=" + gathered.dump() + "\n");
  CHECK(testkit::read_file(run.outdir / "outputs" / "final") == expected);

  CHECK(run.report.at("instances").size() == 4);
  for (int tag : {0, 1, 2}) {
    const json* inst = find_instance(run.report, "work", json::array({tag}));
    REQUIRE(inst);
    CHECK(inst->at("state") == "done");
  }
  expect_clean(run, kLocalEnv);
}

TEST_CASE("gathered file ports surface as path lists and numbered trees") {
  const char* wf = R"(name: tree
inputs:
  items:
    type: value
    default: [u, v]
steps:
  - id: work
    command: hflow-stub mix --label w --arg {item} --out {outdir}/part.dat
    in:
      item:
        from: inputs.items
        type: value
    out:
      part:
        type: file
        capture: part.dat
    scatter: [item]
  - id: merge
    command: hflow-stub mix --label m --in-list {parts}
    in:
      parts:
        from: work.part
        type: file
    out:
      digest:
        type: value
outputs:
  final: merge.digest
  parts: work.part
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  REQUIRE(run.outcome.success);

  const std::string part_u = mix_file("label=w\narg=u\n");
  const std::string part_v = mix_file("label=w\narg=v\n");
  const std::string merge_trace = "label=m\n[\nfile=" + fingerprint(part_u) +
                                  "\nfile=" + fingerprint(part_v) + "\n]\n";
  CHECK(testkit::read_file(run.outdir / "outputs" / "final") ==
        mix_digest(merge_trace));

  // the gathered file output materializes as a numbered directory
  const auto tree = run.outdir / "outputs" / "parts";
  REQUIRE(std::filesystem::is_directory(tree));
  CHECK(testkit::read_file(tree / "0") == part_u);
  CHECK(testkit::read_file(tree / "1") == part_v);
  CHECK_FALSE(std::filesystem::exists(tree / "2"));
  expect_clean(run, kLocalEnv);
}

TEST_CASE("workflow file inputs are imported and staged to consumers") {
  testkit::TempDir tmp;
  const auto doc = tmp.path() / "doc.txt";
  testkit::write_file(doc, "reference text\n");
  const std::string wf = R"(name: import
inputs:
  doc:
    type: file
    default: )" + doc.string() + R"(
steps:
  - id: scan
    command: hflow-stub mix --label s --in-file {doc}
    in:
      doc:
        from: inputs.doc
        type: file
    out:
      digest:
        type: value
outputs:
  digest: scan.digest
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  REQUIRE(run.outcome.success);
  const std::string trace =
      "label=s\nfile=" + fingerprint("reference text\n") + "\n";
  CHECK(testkit::read_file(run.outdir / "outputs" / "digest") ==
        mix_digest(trace));
  expect_clean(run, kLocalEnv);
}

TEST_CASE("failed attempts are retried in fresh work directories") {
  const char* wf = R"(name: flaky
steps:
  - id: retry
    command: '[ -f ../../../sentinel ] || { touch ../../../sentinel; exit 1; }; hflow-stub echo --text ok'
    shell: true
    out:
      msg:
        type: value
outputs:
  msg: retry.msg
)";
  hflow::RunOptions opts;
  opts.retries = 1;
  auto run = testkit::run_engine(wf, kLocalEnv, opts);
  REQUIRE(run.outcome.success);
  CHECK(testkit::read_file(run.outdir / "outputs" / "msg") == "ok");
  const json* inst = find_instance(run.report, "retry");
  REQUIRE(inst);
  CHECK(inst->at("attempts") == 2);
  CHECK(inst->at("state") == "done");
  expect_clean(run, kLocalEnv);
}

TEST_CASE("without retries a nonzero exit fails the run") {
  const char* wf = R"(name: broken
steps:
  - id: boom
    command: hflow-stub fail --code 7 --message kaput
    out:
      msg:
        type: value
outputs:
  msg: boom.msg
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  CHECK_FALSE(run.outcome.success);
  CHECK(run.report.at("run").at("status") == "failed");
  REQUIRE_FALSE(run.outcome.errors.empty());
  CHECK(run.outcome.errors[0].find("step 'boom' [] exited with code 7") !=
        std::string::npos);
  CHECK(run.outcome.errors[0].find("kaput") != std::string::npos);
  const json* inst = find_instance(run.report, "boom");
  REQUIRE(inst);
  CHECK(inst->at("state") == "failed");
  CHECK(inst->at("exit_code") == 7);
  CHECK(inst->at("attempts") == 1);
  CHECK(run.outcome.outputs.empty());
  expect_clean(run, kLocalEnv);
}

TEST_CASE("one failure cancels in-flight work and skips the rest") {
  const char* wf = R"(name: cascade
steps:
  - id: bad
    command: hflow-stub fail --code 9
    out:
      x:
        type: value
  - id: slow
    command: hflow-stub sleep --ms 800
    out:
      y:
        type: value
  - id: merge
    command: hflow-stub mix --label m --arg {a} --arg {b}
    in:
      a:
        from: bad.x
        type: value
      b:
        from: slow.y
        type: value
    out:
      z:
        type: value
outputs:
  z: merge.z
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  CHECK_FALSE(run.outcome.success);
  const json* bad = find_instance(run.report, "bad");
  REQUIRE(bad);
  CHECK(bad->at("state") == "failed");
  const json* slow = find_instance(run.report, "slow");
  REQUIRE(slow);
  CHECK(slow->at("state") == "cancelled");
  // merge never became ready, so it leaves no record
  CHECK(find_instance(run.report, "merge") == nullptr);
  expect_clean(run, kLocalEnv);
}

TEST_CASE("an empty scatter list yields no instances and empty gathers") {
  const char* wf = R"(name: empty
inputs:
  items:
    type: value
    default: []
steps:
  - id: work
    command: hflow-stub mix --label w --arg {item} --out {outdir}/p.dat
    in:
      item:
        from: inputs.items
        type: value
    out:
      digest:
        type: value
      blob:
        type: file
        capture: p.dat
    scatter: [item]
  - id: merge
    command: hflow-stub mix --label m --arg {all}
    in:
      all:
        from: work.digest
        type: value
    out:
      digest:
        type: value
outputs:
  final: merge.digest
  tree: work.blob
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  REQUIRE(run.outcome.success);
  CHECK(testkit::read_file(run.outdir / "outputs" / "final") ==
        mix_digest("label=m\narg=[]\n"));
  const auto tree = run.outdir / "outputs" / "tree";
  REQUIRE(std::filesystem::is_directory(tree));
  CHECK(std::filesystem::is_empty(tree));
  CHECK(run.report.at("instances").size() == 1);  // merge only
  CHECK(find_instance(run.report, "merge") != nullptr);
  expect_clean(run, kLocalEnv);
}

TEST_CASE("commands see the run seed and their reservation") {
  const char* wf = R"(name: introspect
steps:
  - id: probe
    command: printf '%s %s' "$HF_SEED" "$HF_RESOURCES"
    shell: true
    out:
      sight:
        type: value
outputs:
  sight: probe.sight
)";
  hflow::RunOptions opts;
  opts.seed = 1234;
  auto run = testkit::run_engine(wf, kLocalEnv, opts);
  REQUIRE(run.outcome.success);
  const std::string sight = testkit::read_file(run.outdir / "outputs" /
                                               "sight");
  CHECK(sight.substr(0, 14) == "1234 box/main/");
  CHECK(run.report.at("run").at("seed") == 1234);
  expect_clean(run, kLocalEnv);
}

TEST_CASE("scattering over a scalar output fails the run cleanly") {
  const char* wf = R"(name: badscatter
steps:
  - id: gen
    command: hflow-stub echo --text seeds
    out:
      val:
        type: value
  - id: fan
    command: hflow-stub mix --label f --arg {item}
    in:
      item:
        from: gen.val
        type: value
    out:
      digest:
        type: value
    scatter: [item]
outputs:
  digest: fan.digest
)";
  auto run = testkit::run_engine(wf, kLocalEnv, {});
  CHECK_FALSE(run.outcome.success);
  REQUIRE_FALSE(run.outcome.errors.empty());
  CHECK(run.outcome.errors[0].find(
            "step 'fan': scatter over non-list input 'item'") !=
        std::string::npos);
  // the producer finished; only the malformed consumer is missing
  const json* gen = find_instance(run.report, "gen");
  REQUIRE(gen);
  CHECK(gen->at("state") == "done");
  CHECK(find_instance(run.report, "fan") == nullptr);
}

TEST_CASE("data crossing sites moves through the controller") {
  const char* wf = R"(name: move
steps:
  - id: produce
    command: hflow-stub mix --label p --arg seed --out {outdir}/blob.dat
    out:
      blob:
        type: file
        capture: blob.dat
  - id: consume
    command: hflow-stub cat --file {blob}
    in:
      blob:
        from: produce.blob
        type: file
    out:
      copy:
        type: value
outputs:
  copy: consume.copy
)";
  auto run = testkit::run_engine(wf, kSplitEnv, {});
  REQUIRE(run.outcome.success);
  const std::string blob = mix_file("label=p\narg=seed\n");
  CHECK(testkit::read_file(run.outdir / "outputs" / "copy") == blob);

  const json* consume = find_instance(run.report, "consume");
  REQUIRE(consume);
  const auto& transfers = consume->at("transfers");
  REQUIRE(transfers.size() == 2);
  CHECK(transfers.at(0).at("direction") == "out");  // producer → hub
  CHECK(transfers.at(1).at("direction") == "in");   // hub → consumer
  CHECK(transfers.at(1).at("bytes") == blob.size());
  expect_clean(run, kSplitEnv);
}

TEST_CASE("disabled staging turns missing inputs into the command's error") {
  const char* wf = R"(name: stranded
steps:
  - id: produce
    command: hflow-stub mix --label p --arg seed --out {outdir}/blob.dat
    out:
      blob:
        type: file
        capture: blob.dat
  - id: consume
    command: hflow-stub cat --file {blob}
    in:
      blob:
        from: produce.blob
        type: file
    out:
      copy:
        type: value
outputs:
  copy: consume.copy
)";
  hflow::RunOptions opts;
  opts.disable_staging = true;
  auto run = testkit::run_engine(wf, kSplitEnv, opts);
  CHECK_FALSE(run.outcome.success);
  const json* consume = find_instance(run.report, "consume");
  REQUIRE(consume);
  CHECK(consume->at("state") == "failed");
  CHECK(consume->at("exit_code") == 3);
  CHECK(consume->at("transfers").empty());
  REQUIRE_FALSE(run.outcome.errors.empty());
  CHECK(run.outcome.errors[0].find("missing input file") !=
        std::string::npos);
  for (const auto& e : run.outcome.errors)
    CHECK(e.find("output not produced") == std::string::npos);
}
