// Token-driven execution of a validated workflow against an environment
// plan: unfolds scatters into tagged instances, fires each instance once
// all of its tokens exist, and runs ready instances concurrently.
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "hflow/deploy.hpp"
#include "hflow/model.hpp"
#include "hflow/provenance.hpp"

namespace hflow {

struct RunOptions {
  uint32_t max_concurrency = 0;  // 0 = unlimited
  uint32_t retries = 0;
  uint64_t seed = 0;
  // Directory holding the stub tools; prepended to each command's PATH.
  std::string tool_dir;
  // Harness mode: compute staging paths without copying, so missing
  // inputs surface as the command's own failure.
  bool disable_staging = false;
};

struct EngineOutcome {
  bool success = false;
  std::map<std::string, Payload> outputs;
  RunReport report;
  std::vector<std::string> errors;
};

// Runs the workflow. Sites without explicit roots are created under
// outdir/sites/<model>, controller staging under outdir/staging (or the
// plan's staging_dir), and workflow outputs are materialized under
// outdir/outputs. Relative roots in the plan resolve against outdir.
EngineOutcome execute(const Workflow& w, const EnvironmentPlan& plan,
                      const std::filesystem::path& outdir,
                      const RunOptions& opts);

}  // namespace hflow
