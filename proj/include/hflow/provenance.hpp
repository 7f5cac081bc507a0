// The machine-readable trail of a run: what deployed when, which
// resources each instance held, every transfer, and where the outputs
// landed. All run invariants (star topology, slot conservation,
// co-allocation) are checked against this report.
#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hflow/common.hpp"
#include "hflow/data_manager.hpp"
#include "hflow/deploy.hpp"

namespace hflow {

struct InstanceRecord {
  std::string step;
  Tag tag;
  std::string model;
  std::string service;
  std::vector<uint32_t> resources;
  WallTime queued_at{};
  WallTime started_at{};
  WallTime finished_at{};
  int exit_code = 0;
  uint32_t attempts = 0;
  std::string state;  // done | failed | cancelled
  std::vector<TransferRecord> transfers;
  std::vector<std::string> outputs;  // DataReference ids
};

struct RunReport {
  uint64_t seed = 0;
  WallTime started{};
  WallTime finished{};
  std::string status;  // success | failed
  std::vector<DeployRecord> deployments;
  std::vector<InstanceRecord> instances;  // sorted by (step, tag)
  std::vector<std::pair<std::string, std::string>> outputs;  // name → path
};

// normalize_times zeroes every timestamp and wall_ms so reports can be
// compared byte-for-byte across runs.
nlohmann::ordered_json report_to_json(const RunReport& report,
                                      bool normalize_times);

std::string iso8601_utc_ms(WallTime t);

}  // namespace hflow
