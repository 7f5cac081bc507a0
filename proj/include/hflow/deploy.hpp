// Deployment hierarchy (model / service / resource), the environment
// file, step→service binding resolution, lazy co-allocated deployment,
// and the slot-accounting scheduler.
#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hflow/connector.hpp"
#include "hflow/model.hpp"

namespace hflow {

enum class ConnectorKind { local, sandbox, sim_batch };

std::string to_string(ConnectorKind k);

struct ModelDecl {
  std::string name;
  ConnectorKind kind = ConnectorKind::local;
  std::string root;  // empty → engine places the site under its out dir
  SimBatchConfig batch;
  std::vector<ServiceDecl> services;

  const ServiceDecl* find_service(const std::string& name) const;
  bool operator==(const ModelDecl&) const = default;
};

struct BindingDecl {
  std::string step_selector;  // exact id or fnmatch-style glob
  std::string model;
  std::string service;
  uint32_t resources = 1;
  bool operator==(const BindingDecl&) const = default;
};

struct EnvironmentPlan {
  std::vector<ModelDecl> models;
  std::vector<BindingDecl> bindings;
  std::string staging_dir;  // empty → engine default

  const ModelDecl* find_model(const std::string& name) const;
  bool operator==(const EnvironmentPlan&) const = default;
};

EnvironmentPlan parse_environment(const std::string& text);
std::string serialize_environment(const EnvironmentPlan& plan);

// Structural checks plus binding totality against a workflow: unbound
// steps, unknown targets, over-subscribed reservation sizes, duplicate
// selectors.
std::vector<Diagnostic> validate_environment(const Workflow& w,
                                             const EnvironmentPlan& plan);

// Exact selectors beat globs; the later-declared binding wins among
// equally specific matches. Total on validated input; throws Error
// otherwise.
std::map<std::string, BindingDecl> resolve_bindings(
    const Workflow& w, const EnvironmentPlan& plan);

struct DeployRecord {
  std::string model;
  WallTime deployed_at{};
  WallTime undeployed_at{};
  bool undeployed = false;
  std::vector<ServiceInit> services;
};

// Owns connector instances. Deployment is lazy (first demand) and
// single-flight; one deploy brings up all services of the model.
class Deployer {
 public:
  using Factory =
      std::function<std::unique_ptr<Connector>(const ModelDecl&)>;
  Deployer(std::vector<ModelDecl> models, Factory factory);
  ~Deployer();

  // Blocks while another thread deploys the same model; rethrows that
  // thread's failure so a broken model never half-starts.
  Connector& ensure_deployed(const std::string& model);
  void undeploy_all();
  std::vector<DeployRecord> records() const;
  const ModelDecl& decl(const std::string& model) const;

 private:
  struct Entry {
    enum class State { idle, deploying, up, failed } state = State::idle;
    std::unique_ptr<Connector> connector;
    std::string error;
    DeployRecord record;
  };
  std::vector<ModelDecl> models_;
  Factory factory_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Entry> entries_;
};

// Counts how many of the given data references are already present on a
// resource; the scheduler uses it to prefer placements that skip
// transfers.
using LocalityProbe = std::function<size_t(
    const std::string& model, const ResourceRef& r,
    const std::vector<std::string>& ref_ids)>;

struct Reservation {
  std::string model;
  std::string service;
  std::vector<uint32_t> indices;  // rank 0 first
};

// Per-service slot accounting with a strict FIFO queue: the instance at
// the head of the queue reserves first even while it waits for enough
// free slots (no overtaking). acquire() blocks without holding the
// lock's notional "service"; cancellation wakes every waiter.
class Scheduler {
 public:
  explicit Scheduler(const std::vector<ModelDecl>& models);

  // Throws Error("cancelled") when cancel flips while waiting.
  Reservation acquire(const std::string& model, const std::string& service,
                      uint32_t count, const std::vector<std::string>& ref_ids,
                      const LocalityProbe& locality,
                      const std::atomic<bool>& cancel);
  void release(const Reservation& r);
  void cancel_waiters();

 private:
  struct ServiceState {
    std::vector<uint32_t> free_slots;  // per resource index
    std::deque<uint64_t> queue;        // FIFO tickets
    uint64_t next_ticket = 0;
  };
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<std::string, std::string>, ServiceState> services_;
};

}  // namespace hflow
