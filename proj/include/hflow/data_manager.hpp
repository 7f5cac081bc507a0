// Location registry and controller-mediated staging. Every datum a step
// produces becomes a DataReference whose identity is its provenance
// (producing instance + port), and all movement between sites runs
// through controller staging — a star with the controller at the hub.
#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hflow/connector.hpp"
#include "hflow/model.hpp"

namespace hflow {

struct Location {
  bool controller = false;
  std::string model;   // empty when controller
  ResourceRef resource;
  std::string path;  // controller: absolute; site: resource-relative
  auto operator<=>(const Location&) const = default;
};

struct TransferRecord {
  std::string direction;  // "in" = controller→resource, "out" = reverse
  std::string model;
  ResourceRef resource;
  std::string local_path;
  std::string remote_path;
  uint64_t bytes = 0;
  int64_t wall_ms = 0;
};

struct DataRef {
  std::string id;
  std::string step;
  Tag tag;
  std::string port;
  PortKind port_kind = PortKind::file;
  std::string basename;  // file refs: original capture file name
  uint64_t size = 0;
  std::string checksum_hex;
};

// Resolves a model name to its live connector.
using ConnectorLookup = std::function<Connector&(const std::string& model)>;

class DataManager {
 public:
  DataManager(std::filesystem::path staging_dir, ConnectorLookup connectors);

  // Harness mode: ensure_at computes target paths but never copies, so
  // consumers see exactly what an un-staged site would give them.
  void disable_staging() { staging_disabled_ = true; }

  // File captured in an instance's output directory; probes the site
  // for size/digest. Throws Error("output not produced: …") when the
  // capture path does not exist.
  DataRef register_file_output(const std::string& step, const Tag& tag,
                               const std::string& port,
                               const std::string& model, const ResourceRef& r,
                               const std::string& remote_path);

  // Stdout capture: bytes land in controller staging immediately; the
  // producing resource is recorded as the origin for lineage.
  DataRef register_value_output(const std::string& step, const Tag& tag,
                                const std::string& port,
                                const std::string& model,
                                const ResourceRef& r, const std::string& text);

  // Workflow-input file imported into controller staging at run start.
  DataRef register_input_file(const std::string& input_name,
                              const std::filesystem::path& source);

  // Stages the reference onto a resource: no-op when already there,
  // otherwise one get (nearest holder → controller, skipped when
  // staging already holds it) plus one put (controller → target).
  // Concurrent calls for the same (ref, destination) coalesce.
  std::vector<TransferRecord> ensure_at(const std::string& ref_id,
                                        const std::string& model,
                                        const ResourceRef& r);

  // Stages the reference into controller staging (the "get" half).
  std::vector<TransferRecord> ensure_controller(const std::string& ref_id);

  // Resource-relative path a staged ref occupies on any resource.
  std::string remote_data_path(const std::string& ref_id) const;
  // Absolute controller-staging path for the ref.
  std::filesystem::path controller_path(const std::string& ref_id) const;
  // Resource-relative path of the ref on this resource: the original
  // capture path when it was produced there, else the staged path (which
  // is where ensure_at puts it — or would put it, when staging is off).
  std::string path_at(const std::string& ref_id, const std::string& model,
                      const ResourceRef& r) const;

  const DataRef& ref(const std::string& ref_id) const;
  std::vector<Location> locations(const std::string& ref_id) const;
  bool present_at(const std::string& ref_id, const std::string& model,
                  const ResourceRef& r) const;
  size_t locality_count(const std::vector<std::string>& ref_ids,
                        const std::string& model, const ResourceRef& r) const;

  // True iff the digest of the bytes at the location matches the digest
  // recorded at registration.
  bool checksum_verify(const std::string& ref_id, const Location& loc) const;

 private:
  struct Entry {
    DataRef ref;
    std::set<Location> locations;
  };
  std::string new_id(const std::string& step, const Tag& tag,
                     const std::string& port);
  void add_location(const std::string& ref_id, Location loc);

  std::filesystem::path staging_dir_;
  ConnectorLookup connectors_;
  bool staging_disabled_ = false;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Entry> entries_;
  std::set<std::pair<std::string, std::string>> inflight_;  // (ref, loc key)
};

}  // namespace hflow
