#pragma once

#include <atomic>
#include <map>
#include <string>
#include <vector>

namespace hflow {

struct ProcessResult {
  int exit_code = -1;        // 128+signal when signalled
  std::string stdout_data;
  std::string stderr_data;
  bool stdout_truncated = false;
  bool stderr_truncated = false;
  bool cancelled = false;
  int64_t wall_ms = 0;
};

struct ProcessSpec {
  std::vector<std::string> argv;  // argv[0] resolved via PATH from env
  std::string cwd;
  std::map<std::string, std::string> env;  // full child environment
  size_t capture_limit = 8u << 20;
  // When set, a transition to true terminates the child (SIGTERM) and
  // the result comes back with cancelled = true.
  const std::atomic<bool>* cancel = nullptr;
};

// Runs to completion with stdin from /dev/null and both output streams
// captured (bounded; overflow is dropped and flagged). Throws Error when
// the process cannot be spawned at all.
ProcessResult run_process(const ProcessSpec& spec);

}  // namespace hflow
