// The pluggability boundary between the engine and execution sites. A
// connector can run a command on a resource and move single files
// between the controller and a resource — nothing else. There is no
// site-to-site operation, so every transfer path has the controller as
// one endpoint by construction.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hflow/common.hpp"
#include "hflow/subprocess.hpp"

namespace hflow {

// A resource within one connector's model: (service, index).
struct ResourceRef {
  std::string service;
  uint32_t index = 0;
  auto operator<=>(const ResourceRef&) const = default;
};

struct ServiceDecl {
  std::string name;
  uint32_t resources = 1;
  uint32_t slots = 1;
  bool operator==(const ServiceDecl&) const = default;
};

struct RemoteCommand {
  std::vector<std::string> argv;  // shell = false: pre-substituted argv
  std::string script;             // shell = true: run via /bin/sh -c
  bool shell = false;
  std::string workdir;                   // resource-relative
  std::vector<std::string> make_dirs;    // resource-relative, pre-created
  std::map<std::string, std::string> env;
  const std::atomic<bool>* cancel = nullptr;
};

struct TransferStat {
  uint64_t bytes = 0;
  int64_t wall_ms = 0;
};

struct RemoteFileInfo {
  bool exists = false;
  uint64_t size = 0;
  std::string checksum_hex;
};

struct ServiceInit {
  std::string service;
  WallTime initialized_at;
};

class Connector {
 public:
  virtual ~Connector() = default;
  virtual std::string kind() const = 0;

  // Brings up every service of the model; returns one init event per
  // service in declaration order.
  virtual std::vector<ServiceInit> initialize() = 0;
  virtual void teardown() = 0;

  virtual ProcessResult run(const ResourceRef& r, const RemoteCommand& cmd) = 0;

  // Controller-initiated data plane. Remote paths are resource-relative
  // and confined (no absolute paths, no upward traversal).
  virtual TransferStat put(const std::filesystem::path& local,
                           const ResourceRef& r,
                           const std::string& remote) = 0;
  virtual TransferStat get(const ResourceRef& r, const std::string& remote,
                           const std::filesystem::path& local) = 0;

  // Metadata probe (size + digest) without moving the bytes.
  virtual RemoteFileInfo file_info(const ResourceRef& r,
                                   const std::string& remote) = 0;

  virtual std::vector<ResourceRef> available_resources(
      const std::string& service) const = 0;

  // Absolute path of a confined resource-relative path, for command
  // argument substitution.
  virtual std::string resolve(const ResourceRef& r,
                              const std::string& remote) const = 0;
};

// Directory-backed site: resources live at root/<service>/<index>/.
// Backs both the `local` connector (controller machine) and the
// `sandbox` connector (emulated air-gapped site); they differ only in
// the kind string, since isolation comes from staging discipline, not
// from the mechanics of running a process in a directory.
class DirSiteConnector : public Connector {
 public:
  DirSiteConnector(std::string kind, std::filesystem::path root,
                   std::vector<ServiceDecl> services);
  ~DirSiteConnector() override;

  std::string kind() const override { return kind_; }
  std::vector<ServiceInit> initialize() override;
  void teardown() override;
  ProcessResult run(const ResourceRef& r, const RemoteCommand& cmd) override;
  TransferStat put(const std::filesystem::path& local, const ResourceRef& r,
                   const std::string& remote) override;
  TransferStat get(const ResourceRef& r, const std::string& remote,
                   const std::filesystem::path& local) override;
  RemoteFileInfo file_info(const ResourceRef& r,
                           const std::string& remote) override;
  std::vector<ResourceRef> available_resources(
      const std::string& service) const override;
  std::string resolve(const ResourceRef& r,
                      const std::string& remote) const override;

 private:
  std::filesystem::path resource_dir(const ResourceRef& r) const;

  std::string kind_;
  std::filesystem::path root_;
  std::vector<ServiceDecl> services_;
};

struct SimBatchConfig {
  uint32_t max_concurrent_jobs = 1;
  int64_t submit_delay_ms = 0;
  int64_t poll_interval_ms = 50;
};

enum class JobState { queued, running, done, cancelled };

struct JobInfo {
  uint64_t id = 0;
  JobState state = JobState::queued;
  // Milliseconds on a steady clock shared by the whole queue, so
  // interval arithmetic over the job table is exact.
  int64_t submitted_ms = -1;
  int64_t started_ms = -1;
  int64_t finished_ms = -1;
};

// Queue-fronted site: run() becomes submit + wait against a FIFO job
// table with a concurrency cap, emulating batch-managed clusters. The
// data plane passes straight through to the underlying directory site
// (file staging does not queue).
class SimBatchConnector : public Connector {
 public:
  SimBatchConnector(std::filesystem::path root,
                    std::vector<ServiceDecl> services, SimBatchConfig cfg);
  ~SimBatchConnector() override;

  std::string kind() const override { return "sim-batch"; }
  std::vector<ServiceInit> initialize() override;
  void teardown() override;
  ProcessResult run(const ResourceRef& r, const RemoteCommand& cmd) override;
  TransferStat put(const std::filesystem::path& local, const ResourceRef& r,
                   const std::string& remote) override;
  TransferStat get(const ResourceRef& r, const std::string& remote,
                   const std::filesystem::path& local) override;
  RemoteFileInfo file_info(const ResourceRef& r,
                           const std::string& remote) override;
  std::vector<ResourceRef> available_resources(
      const std::string& service) const override;
  std::string resolve(const ResourceRef& r,
                      const std::string& remote) const override;

  // Direct queue access, used on its own in scheduling experiments.
  uint64_t submit(const ResourceRef& r, RemoteCommand cmd);
  ProcessResult wait(uint64_t job_id);
  std::vector<JobInfo> job_table() const;

 private:
  struct Job;
  void promote_locked();
  void run_job(std::shared_ptr<Job> job);
  int64_t now_ms() const;

  DirSiteConnector site_;
  SimBatchConfig cfg_;
  std::chrono::steady_clock::time_point epoch_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<uint64_t, std::shared_ptr<Job>> jobs_;
  std::deque<uint64_t> queue_;  // FIFO of queued job ids
  uint32_t running_ = 0;
  uint64_t next_id_ = 1;
  bool closed_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace hflow
