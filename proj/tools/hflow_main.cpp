#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "hflow/deploy.hpp"
#include "hflow/engine.hpp"
#include "hflow/grid.hpp"
#include "hflow/model.hpp"
#include "hflow/provenance.hpp"
#include "hflow/unfold.hpp"

namespace fs = std::filesystem;
using namespace hflow;

namespace {

constexpr int kExitDiagnostics = 1;
constexpr int kExitUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error("cannot write file: " + path.string());
}

int print_diagnostics(const std::vector<Diagnostic>& diags) {
  for (const auto& d : diags)
    std::cout << d.code << ": " << d.message << "\n";
  return diags.empty() ? 0 : kExitDiagnostics;
}

Workflow load_workflow(const std::string& path) {
  return parse_workflow(read_file(path));
}

EnvironmentPlan load_environment(const std::string& path) {
  return parse_environment(read_file(path));
}

int cmd_validate(const std::string& wf_path, const std::string& env_path) {
  const Workflow w = load_workflow(wf_path);
  std::vector<Diagnostic> diags = validate(w);
  if (!env_path.empty()) {
    const EnvironmentPlan plan = load_environment(env_path);
    const auto env_diags = validate_environment(w, plan);
    diags.insert(diags.end(), env_diags.begin(), env_diags.end());
  }
  return print_diagnostics(diags);
}

int cmd_plan(const std::string& wf_path, const std::string& env_path) {
  const Workflow w = load_workflow(wf_path);
  const EnvironmentPlan plan = load_environment(env_path);
  std::vector<Diagnostic> diags = validate(w);
  const auto env_diags = validate_environment(w, plan);
  diags.insert(diags.end(), env_diags.begin(), env_diags.end());
  if (!diags.empty()) return print_diagnostics(diags);

  const WorkflowPlan unfolded = unfold_plan(w);
  const auto bindings = resolve_bindings(w, plan);
  std::cout << "workflow " << w.name << ": " << w.steps.size() << " steps\n";
  for (const auto& id : unfolded.topo_order) {
    const Step& step = *w.find_step(id);
    const StepPlan& sp = unfolded.steps.at(id);
    const BindingDecl& b = bindings.at(id);
    std::cout << "step " << id << "\n";
    std::cout << "  binding: " << b.model << "/" << b.service << " x"
              << b.resources << "\n";
    std::cout << "  depth: " << sp.depth;
    if (!sp.level_anchors.empty()) {
      std::cout << "  levels:";
      for (const auto& a : sp.level_anchors) std::cout << " " << a;
    }
    std::cout << "\n";
    for (const auto& port : step.inputs) {
      const PortPlan& pp = sp.ports.at(port.name);
      std::cout << "  in " << port.name << " <- " << port.from << "  ["
                << to_string(pp.cls);
      if (pp.gather_levels > 0)
        std::cout << " x" << pp.gather_levels;
      std::cout << "]\n";
    }
    for (const auto& port : step.outputs)
      std::cout << "  out " << port.name << " ("
                << (port.kind == PortKind::file ? "file" : "value") << ")\n";
  }
  std::cout << "edges:\n";
  for (const auto& [from, to] : dependency_edges(w))
    std::cout << "  " << from << " -> " << to << "\n";
  return 0;
}

int cmd_run(const std::string& wf_path, const std::string& env_path,
            const std::string& outdir, std::string report_path,
            const RunOptions& opts, bool normalize_times) {
  const Workflow w = load_workflow(wf_path);
  const EnvironmentPlan plan = load_environment(env_path);
  std::vector<Diagnostic> diags = validate(w);
  const auto env_diags = validate_environment(w, plan);
  diags.insert(diags.end(), env_diags.begin(), env_diags.end());
  if (!diags.empty()) {
    print_diagnostics(diags);
    return kExitUsage;  // the run never starts; no report is written
  }

  const EngineOutcome outcome = execute(w, plan, outdir, opts);
  if (report_path.empty()) report_path = (fs::path(outdir) / "report.json").string();
  write_file(report_path,
             report_to_json(outcome.report, normalize_times).dump(2) + "\n");
  for (const auto& e : outcome.errors) std::cerr << "error: " << e << "\n";
  return outcome.success ? 0 : 1;
}

int cmd_estimate(uint64_t variants, double hours,
                 const std::string& slots_csv) {
  if (hours <= 0) {
    std::cerr << "estimate: --hours must be positive\n";
    return kExitUsage;
  }
  std::vector<uint64_t> slots;
  std::stringstream ss(slots_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      slots.push_back(v);
    } catch (const std::exception&) {
      std::cerr << "estimate: bad slot count '" << item << "'\n";
      return kExitUsage;
    }
  }
  if (slots.empty()) {
    std::cerr << "estimate: --slots needs at least one value\n";
    return kExitUsage;
  }
  for (const uint64_t g : slots) {
    const double h = estimate_makespan(variants, hours, g);
    char line[160];
    std::snprintf(line, sizeof(line), "slots %llu: %.1f h (%.1f days)\n",
                  static_cast<unsigned long long>(g), h, h / 24.0);
    std::cout << line;
  }
  return 0;
}

int cmd_gridgen(uint32_t networks, uint32_t hyperparams, uint32_t datasets,
                uint32_t folds, const std::string& outdir) {
  const GridFiles files =
      generate_grid(make_grid_spec(networks, hyperparams, datasets, folds));
  const fs::path dir(outdir);
  write_file(dir / "workflow.yaml", files.workflow_yaml);
  write_file(dir / "environment.yaml", files.environment_yaml);
  write_file(dir / "manifest.json", files.manifest_json);
  std::cout << (dir / "workflow.yaml").string() << "\n"
            << (dir / "environment.yaml").string() << "\n"
            << (dir / "manifest.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid dataflow workflow runner"};
  app.require_subcommand(1);

  std::string wf_path, env_path, outdir, report_path;
  uint64_t seed = 0;
  uint32_t max_concurrency = 0, retries = 0;
  bool normalize_times = false, disable_staging = false;
  std::string tool_dir;

  auto* validate_cmd = app.add_subcommand("validate", "check a workflow");
  validate_cmd->add_option("-w,--workflow", wf_path)->required();
  validate_cmd->add_option("-e,--env", env_path);

  auto* plan_cmd = app.add_subcommand("plan", "print the execution plan");
  plan_cmd->add_option("-w,--workflow", wf_path)->required();
  plan_cmd->add_option("-e,--env", env_path)->required();

  auto* run_cmd = app.add_subcommand("run", "execute a workflow");
  run_cmd->add_option("-w,--workflow", wf_path)->required();
  run_cmd->add_option("-e,--env", env_path)->required();
  run_cmd->add_option("-o,--outdir", outdir)->required();
  run_cmd->add_option("--report", report_path);
  run_cmd->add_option("--seed", seed);
  run_cmd->add_option("--max-concurrency", max_concurrency);
  run_cmd->add_option("--retries", retries);
  run_cmd->add_option("--tool-dir", tool_dir);
  run_cmd->add_flag("--normalize-times", normalize_times);
  run_cmd->add_flag("--disable-staging", disable_staging,
                    "test mode: compute staging paths but never copy");

  auto* estimate_cmd =
      app.add_subcommand("estimate", "grid makespan arithmetic");
  uint64_t variants = 0;
  double hours = 0;
  std::string slots_csv;
  estimate_cmd->add_option("--variants", variants)->required();
  estimate_cmd->add_option("--hours", hours)->required();
  estimate_cmd->add_option("--slots", slots_csv)->required();

  auto* gridgen_cmd =
      app.add_subcommand("gridgen", "emit the grid-search pipeline");
  uint32_t g_networks = 2, g_hyperparams = 2, g_datasets = 1, g_folds = 3;
  gridgen_cmd->add_option("--networks", g_networks);
  gridgen_cmd->add_option("--hyperparams", g_hyperparams);
  gridgen_cmd->add_option("--datasets", g_datasets);
  gridgen_cmd->add_option("--folds", g_folds);
  gridgen_cmd->add_option("-o,--outdir", outdir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (validate_cmd->parsed()) return cmd_validate(wf_path, env_path);
    if (plan_cmd->parsed()) return cmd_plan(wf_path, env_path);
    if (run_cmd->parsed()) {
      RunOptions opts;
      opts.max_concurrency = max_concurrency;
      opts.retries = retries;
      opts.seed = seed;
      opts.tool_dir = tool_dir;
      opts.disable_staging = disable_staging;
      return cmd_run(wf_path, env_path, outdir, report_path, opts,
                     normalize_times);
    }
    if (estimate_cmd->parsed())
      return cmd_estimate(variants, hours, slots_csv);
    if (gridgen_cmd->parsed())
      return cmd_gridgen(g_networks, g_hyperparams, g_datasets, g_folds,
                         outdir);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
