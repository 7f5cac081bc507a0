#include "hflow/provenance.hpp"

#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <nlohmann/json.hpp>

namespace hflow {

std::string tag_to_string(const Tag& tag) {
  std::string out;
  for (size_t i = 0; i < tag.size(); ++i) {
    if (i) out.push_back('.');
    out += std::to_string(tag[i]);
  }
  return out;
}

Tag tag_prefix(const Tag& tag, size_t len) {
  return Tag(tag.begin(), tag.begin() + std::min(len, tag.size()));
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string iso8601_utc_ms(WallTime t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      t.time_since_epoch())
                      .count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
  return buf;
}

namespace {

using json = nlohmann::ordered_json;

std::string stamp(WallTime t, bool normalize) {
  return iso8601_utc_ms(normalize ? WallTime{} : t);
}

json transfer_to_json(const TransferRecord& t, bool normalize) {
  json j;
  j["direction"] = t.direction;
  j["resource"] = t.model + "/" + t.resource.service + "/" +
                  std::to_string(t.resource.index);
  j["local_path"] = t.local_path;
  j["remote_path"] = t.remote_path;
  j["bytes"] = t.bytes;
  j["wall_ms"] = normalize ? 0 : t.wall_ms;
  return j;
}

}  // namespace

json report_to_json(const RunReport& report, bool normalize_times) {
  json root;
  root["run"] = {{"seed", report.seed},
                 {"started", stamp(report.started, normalize_times)},
                 {"finished", stamp(report.finished, normalize_times)},
                 {"status", report.status}};

  json deployments = json::array();
  for (const auto& d : report.deployments) {
    json services = json::array();
    for (const auto& s : d.services)
      services.push_back(
          {{"service", s.service},
           {"initialized_at", stamp(s.initialized_at, normalize_times)}});
    deployments.push_back(
        {{"model", d.model},
         {"deployed_at", stamp(d.deployed_at, normalize_times)},
         {"undeployed_at",
          d.undeployed ? stamp(d.undeployed_at, normalize_times) : ""},
         {"services", std::move(services)}});
  }
  root["deployments"] = std::move(deployments);

  json instances = json::array();
  for (const auto& r : report.instances) {
    json j;
    j["instance"] = {{"step", r.step}, {"tag", r.tag}};
    j["binding"] = {{"model", r.model}, {"service", r.service}};
    j["resources"] = r.resources;
    j["queued"] = stamp(r.queued_at, normalize_times);
    j["started"] = stamp(r.started_at, normalize_times);
    j["finished"] = stamp(r.finished_at, normalize_times);
    j["exit_code"] = r.exit_code;
    j["attempts"] = r.attempts;
    j["state"] = r.state;
    json transfers = json::array();
    for (const auto& t : r.transfers)
      transfers.push_back(transfer_to_json(t, normalize_times));
    j["transfers"] = std::move(transfers);
    j["outputs"] = r.outputs;
    instances.push_back(std::move(j));
  }
  root["instances"] = std::move(instances);

  json outputs = json::object();
  for (const auto& [name, path] : report.outputs) outputs[name] = path;
  root["outputs"] = std::move(outputs);
  return root;
}

}  // namespace hflow
