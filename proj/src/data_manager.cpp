#include "hflow/data_manager.hpp"

#include <fstream>

namespace hflow {

namespace fs = std::filesystem;

namespace {

std::string location_key(const Location& loc) {
  if (loc.controller) return "@controller";
  return loc.model + "/" + loc.resource.service + "/" +
         std::to_string(loc.resource.index);
}

std::string digest_of(const std::string& bytes) {
  return hex64(fnv1a64(bytes));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("unreadable file: " + p.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

}  // namespace

DataManager::DataManager(fs::path staging_dir, ConnectorLookup connectors)
    : staging_dir_(std::move(staging_dir)),
      connectors_(std::move(connectors)) {
  fs::create_directories(staging_dir_);
}

std::string DataManager::new_id(const std::string& step, const Tag& tag,
                                const std::string& port) {
  // Provenance-derived identity: producing instance + port + sequence.
  std::string id = step;
  if (!tag.empty()) id += "_" + tag_to_string(tag);
  id += "." + port;
  std::lock_guard<std::mutex> lock(mu_);
  std::string candidate = id;
  for (uint32_t n = 2; entries_.count(candidate); ++n)
    candidate = id + "#" + std::to_string(n);
  return candidate;
}

void DataManager::add_location(const std::string& ref_id, Location loc) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.at(ref_id).locations.insert(std::move(loc));
}

DataRef DataManager::register_file_output(const std::string& step,
                                          const Tag& tag,
                                          const std::string& port,
                                          const std::string& model,
                                          const ResourceRef& r,
                                          const std::string& remote_path) {
  const RemoteFileInfo info = connectors_(model).file_info(r, remote_path);
  if (!info.exists)
    throw Error("output not produced: step '" + step + "' tag [" +
                tag_to_string(tag) + "] port '" + port + "' expected file '" +
                remote_path + "'");
  DataRef ref;
  ref.id = new_id(step, tag, port);
  ref.step = step;
  ref.tag = tag;
  ref.port = port;
  ref.port_kind = PortKind::file;
  ref.basename = fs::path(remote_path).filename().string();
  ref.size = info.size;
  ref.checksum_hex = info.checksum_hex;
  {
    std::lock_guard<std::mutex> lock(mu_);
    entries_[ref.id] = Entry{ref, {Location{false, model, r, remote_path}}};
  }
  return ref;
}

DataRef DataManager::register_value_output(const std::string& step,
                                           const Tag& tag,
                                           const std::string& port,
                                           const std::string& model,
                                           const ResourceRef& r,
                                           const std::string& text) {
  DataRef ref;
  ref.id = new_id(step, tag, port);
  ref.step = step;
  ref.tag = tag;
  ref.port = port;
  ref.port_kind = PortKind::value;
  ref.size = text.size();
  ref.checksum_hex = digest_of(text);

  const fs::path staged = staging_dir_ / "values" / ref.id;
  fs::create_directories(staged.parent_path());
  std::ofstream out(staged, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw Error("cannot write staging file: " + staged.string());

  {
    std::lock_guard<std::mutex> lock(mu_);
    entries_[ref.id] =
        Entry{ref,
              {Location{true, "", {}, staged.string()},
               // Lineage origin: the stdout was produced on this resource.
               Location{false, model, r, ""}}};
  }
  return ref;
}

DataRef DataManager::register_input_file(const std::string& input_name,
                                         const fs::path& source) {
  if (!fs::exists(source))
    throw Error("workflow input '" + input_name + "': file not found: " +
                source.string());
  DataRef ref;
  ref.id = new_id("inputs", {}, input_name);
  ref.step = "inputs";
  ref.port = input_name;
  ref.port_kind = PortKind::file;
  ref.basename = source.filename().string();
  const std::string bytes = read_file(source);
  ref.size = bytes.size();
  ref.checksum_hex = digest_of(bytes);

  const fs::path staged = staging_dir_ / "files" / ref.id / ref.basename;
  fs::create_directories(staged.parent_path());
  fs::copy_file(source, staged, fs::copy_options::overwrite_existing);
  {
    std::lock_guard<std::mutex> lock(mu_);
    entries_[ref.id] = Entry{ref, {Location{true, "", {}, staged.string()}}};
  }
  return ref;
}

std::string DataManager::remote_data_path(const std::string& ref_id) const {
  const DataRef& r = ref(ref_id);
  return "data/" + r.id + "/" + r.basename;
}

std::string DataManager::path_at(const std::string& ref_id,
                                 const std::string& model,
                                 const ResourceRef& r) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = entries_.find(ref_id);
    if (it == entries_.end())
      throw Error("unknown data reference: " + ref_id);
    for (const auto& loc : it->second.locations)
      if (!loc.controller && loc.model == model && loc.resource == r &&
          !loc.path.empty())
        return loc.path;
  }
  return remote_data_path(ref_id);
}

fs::path DataManager::controller_path(const std::string& ref_id) const {
  const DataRef& r = ref(ref_id);
  if (r.port_kind == PortKind::value) return staging_dir_ / "values" / r.id;
  return staging_dir_ / "files" / r.id / r.basename;
}

const DataRef& DataManager::ref(const std::string& ref_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = entries_.find(ref_id);
  if (it == entries_.end()) throw Error("unknown data reference: " + ref_id);
  return it->second.ref;
}

std::vector<Location> DataManager::locations(const std::string& ref_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = entries_.find(ref_id);
  if (it == entries_.end()) throw Error("unknown data reference: " + ref_id);
  return {it->second.locations.begin(), it->second.locations.end()};
}

bool DataManager::present_at(const std::string& ref_id,
                             const std::string& model,
                             const ResourceRef& r) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = entries_.find(ref_id);
  if (it == entries_.end()) return false;
  for (const auto& loc : it->second.locations)
    if (!loc.controller && loc.model == model && loc.resource == r &&
        !loc.path.empty())
      return true;
  return false;
}

size_t DataManager::locality_count(const std::vector<std::string>& ref_ids,
                                   const std::string& model,
                                   const ResourceRef& r) const {
  size_t n = 0;
  for (const auto& id : ref_ids)
    if (present_at(id, model, r)) ++n;
  return n;
}

std::vector<TransferRecord> DataManager::ensure_controller(
    const std::string& ref_id) {
  const fs::path staged = controller_path(ref_id);
  const std::string key = "@controller";

  std::unique_lock<std::mutex> lock(mu_);
  Entry& entry = entries_.at(ref_id);
  for (;;) {
    for (const auto& loc : entry.locations)
      if (loc.controller) return {};
    if (inflight_.insert({ref_id, key}).second) break;
    cv_.wait(lock);
  }

  // Deterministic "nearest" holder: transfer costs are uniform here, so
  // nearest degenerates to the first holder in location order.
  Location src{};
  bool found = false;
  for (const auto& loc : entry.locations) {
    if (!loc.controller && !loc.path.empty()) {
      src = loc;
      found = true;
      break;
    }
  }
  lock.unlock();

  std::vector<TransferRecord> records;
  std::string error;
  if (!found) {
    error = "no readable location for reference " + ref_id;
  } else {
    try {
      const TransferStat stat =
          connectors_(src.model).get(src.resource, src.path, staged);
      records.push_back({"out", src.model, src.resource, staged.string(),
                         src.path, stat.bytes, stat.wall_ms});
    } catch (const std::exception& e) {
      error = e.what();
    }
  }

  lock.lock();
  inflight_.erase({ref_id, key});
  if (error.empty())
    entry.locations.insert(Location{true, "", {}, staged.string()});
  lock.unlock();
  cv_.notify_all();
  if (!error.empty()) throw Error(error);
  return records;
}

std::vector<TransferRecord> DataManager::ensure_at(const std::string& ref_id,
                                                   const std::string& model,
                                                   const ResourceRef& r) {
  if (staging_disabled_) return {};
  const std::string remote = remote_data_path(ref_id);
  const Location target{false, model, r, remote};
  const std::string key = location_key(target);

  {
    std::unique_lock<std::mutex> lock(mu_);
    Entry& entry = entries_.at(ref_id);
    for (;;) {
      // Already on this resource — original capture path or staged copy.
      bool present = false;
      for (const auto& loc : entry.locations)
        if (!loc.controller && loc.model == model && loc.resource == r &&
            !loc.path.empty())
          present = true;
      if (present) return {};
      if (inflight_.insert({ref_id, key}).second) break;
      cv_.wait(lock);
    }
  }

  std::vector<TransferRecord> records;
  std::string error;
  try {
    records = ensure_controller(ref_id);
    const TransferStat stat =
        connectors_(model).put(controller_path(ref_id), r, remote);
    records.push_back({"in", model, r, controller_path(ref_id).string(),
                       remote, stat.bytes, stat.wall_ms});
  } catch (const std::exception& e) {
    error = e.what();
  }

  {
    std::lock_guard<std::mutex> lock(mu_);
    inflight_.erase({ref_id, key});
    if (error.empty()) entries_.at(ref_id).locations.insert(target);
  }
  cv_.notify_all();
  if (!error.empty()) throw Error(error);
  return records;
}

bool DataManager::checksum_verify(const std::string& ref_id,
                                  const Location& loc) const {
  const DataRef& r = ref(ref_id);
  if (r.port_kind == PortKind::value && !loc.controller)
    return true;  // inline values have no site file to check
  if (loc.controller) return digest_of(read_file(loc.path)) == r.checksum_hex;
  const RemoteFileInfo info =
      connectors_(loc.model).file_info(loc.resource, loc.path);
  if (!info.exists) throw Error("unreadable location for " + ref_id);
  return info.checksum_hex == r.checksum_hex;
}

}  // namespace hflow
