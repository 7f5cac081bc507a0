// Report validators: each takes a provenance report (JSON) and returns a
// list of violations, empty when the invariant holds. They only consume
// what the report records, so they can sweep reports from any run.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hflow/connector.hpp"
#include "hflow/deploy.hpp"
#include "support/harness.hpp"

namespace testkit {

// ISO-8601 UTC with milliseconds → ms since epoch. Epoch itself (all
// zeros) marks an absent stamp.
int64_t parse_iso_ms(const std::string& s);

// Every transfer has the controller as one endpoint: local_path lives
// under controller staging, remote_path is resource-relative, direction
// is one of in/out. Site-to-site movement has no representation that
// could pass this.
std::vector<std::string> star_topology(const json& report,
                                       const fs::path& staging_root);

// At no instant do the instances holding a (model, service, index) slot
// exceed the service's declared slot count, and reserved indices exist.
std::vector<std::string> slot_conservation(const json& report,
                                           const hflow::EnvironmentPlan& plan);

// One deploy event per model used, every declared service initialized
// during it, and all of them before the first bound instance starts.
std::vector<std::string> co_allocation(const json& report,
                                       const hflow::EnvironmentPlan& plan);

// Per-instance sanity: queued ≤ started ≤ finished, attempts ≥ 1, known
// state, done implies exit 0.
std::vector<std::string> instance_invariants(const json& report);

// All of the above.
std::vector<std::string> check_report(const json& report,
                                      const hflow::EnvironmentPlan& plan,
                                      const fs::path& staging_root);

// Peak number of simultaneously running jobs in a sim-batch job table
// (finishing and starting at the same millisecond do not overlap).
uint32_t peak_running(const std::vector<hflow::JobInfo>& jobs);

// True when started_ms is non-decreasing in submission (id) order for
// the jobs that ran.
bool started_in_submit_order(const std::vector<hflow::JobInfo>& jobs);

}  // namespace testkit
