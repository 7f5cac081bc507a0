// Shared test plumbing: scratch directories, driving the CLI binaries,
// in-process engine runs that archive their provenance reports so
// suite-wide invariants can sweep every report at the end.
#pragma once

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hflow/engine.hpp"

namespace testkit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Self-deleting scratch directory under the system temp root.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p);
void write_file(const fs::path& p, const std::string& content);
json load_json(const fs::path& p);

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the installed binaries (paths baked in at compile time).
CliResult run_cli(const std::vector<std::string>& args);
CliResult run_stub(const std::vector<std::string>& args,
                   const std::vector<std::pair<std::string, std::string>>&
                       extra_env = {});

const char* cli_bin();
const char* stub_bin();
const char* stub_dir();

struct EngineRun {
  std::shared_ptr<TempDir> dir;  // owns outdir
  fs::path outdir;
  fs::path staging_root;
  hflow::EngineOutcome outcome;
  json report;
};

// Parses, validates, executes in-process, writes outdir/report.json and
// registers the run in the suite-wide report archive.
EngineRun run_engine(const std::string& workflow_yaml,
                     const std::string& env_yaml, hflow::RunOptions opts);

struct ArchivedReport {
  json report;
  fs::path staging_root;
  std::string env_yaml;
};

// Persists a run's report (with its staging root and environment) into a
// directory shared by all test binaries, so suite-wide invariants can
// sweep every run. Re-running a binary replaces its own entries.
void archive_report(const json& report, const fs::path& staging_root,
                    const std::string& env_yaml);
std::vector<ArchivedReport> load_archived_reports();

// Recursive file-tree comparison; directories match when they hold the
// same entry names with the same bytes.
bool same_tree(const fs::path& a, const fs::path& b, std::string* why);

}  // namespace testkit
