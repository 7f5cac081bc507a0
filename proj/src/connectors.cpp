#include "hflow/connector.hpp"

#include <fstream>

namespace hflow {

namespace fs = std::filesystem;

namespace {

// Remote paths must stay inside the resource directory: relative, no
// upward traversal, no empty segments that could alias.
void check_confined(const std::string& remote) {
  if (remote.empty() || remote.front() == '/')
    throw Error("remote path escapes the resource sandbox: '" + remote + "'");
  size_t start = 0;
  while (start <= remote.size()) {
    const size_t end = remote.find('/', start);
    const std::string seg =
        remote.substr(start, end == std::string::npos ? end : end - start);
    if (seg == "..")
      throw Error("remote path escapes the resource sandbox: '" + remote +
                  "'");
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

uint64_t file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("unreadable file: " + p.string());
  uint64_t h = fnv1a64("");
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a64(std::string_view(buf, static_cast<size_t>(in.gcount())), h);
  return h;
}

TransferStat copy_file_timed(const fs::path& from, const fs::path& to) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!fs::exists(from)) throw Error("missing transfer source: " + from.string());
  fs::create_directories(to.parent_path());
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
  const auto t1 = std::chrono::steady_clock::now();
  return {fs::file_size(to),
          std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0)
              .count()};
}

}  // namespace

DirSiteConnector::DirSiteConnector(std::string kind, fs::path root,
                                   std::vector<ServiceDecl> services)
    : kind_(std::move(kind)),
      root_(std::move(root)),
      services_(std::move(services)) {}

DirSiteConnector::~DirSiteConnector() = default;

fs::path DirSiteConnector::resource_dir(const ResourceRef& r) const {
  return root_ / r.service / std::to_string(r.index);
}

std::vector<ServiceInit> DirSiteConnector::initialize() {
  std::vector<ServiceInit> inits;
  for (const auto& svc : services_) {
    for (uint32_t i = 0; i < svc.resources; ++i)
      fs::create_directories(root_ / svc.name / std::to_string(i));
    inits.push_back({svc.name, WallClock::now()});
  }
  return inits;
}

void DirSiteConnector::teardown() {}

ProcessResult DirSiteConnector::run(const ResourceRef& r,
                                    const RemoteCommand& cmd) {
  check_confined(cmd.workdir);
  const fs::path dir = resource_dir(r) / cmd.workdir;
  fs::create_directories(dir);
  for (const auto& extra : cmd.make_dirs) {
    check_confined(extra);
    fs::create_directories(resource_dir(r) / extra);
  }
  ProcessSpec spec;
  spec.argv = cmd.shell
                  ? std::vector<std::string>{"/bin/sh", "-c", cmd.script}
                  : cmd.argv;
  spec.cwd = dir.string();
  spec.env = cmd.env;
  spec.cancel = cmd.cancel;
  return run_process(spec);
}

TransferStat DirSiteConnector::put(const fs::path& local, const ResourceRef& r,
                                   const std::string& remote) {
  check_confined(remote);
  return copy_file_timed(local, resource_dir(r) / remote);
}

TransferStat DirSiteConnector::get(const ResourceRef& r,
                                   const std::string& remote,
                                   const fs::path& local) {
  check_confined(remote);
  return copy_file_timed(resource_dir(r) / remote, local);
}

RemoteFileInfo DirSiteConnector::file_info(const ResourceRef& r,
                                           const std::string& remote) {
  check_confined(remote);
  const fs::path p = resource_dir(r) / remote;
  if (!fs::exists(p) || fs::is_directory(p)) return {};
  return {true, fs::file_size(p), hex64(file_checksum(p))};
}

std::vector<ResourceRef> DirSiteConnector::available_resources(
    const std::string& service) const {
  std::vector<ResourceRef> out;
  for (const auto& svc : services_) {
    if (svc.name != service) continue;
    for (uint32_t i = 0; i < svc.resources; ++i) out.push_back({service, i});
  }
  return out;
}

std::string DirSiteConnector::resolve(const ResourceRef& r,
                                      const std::string& remote) const {
  check_confined(remote);
  return fs::absolute(resource_dir(r) / remote).lexically_normal().string();
}

// ---------------------------------------------------------------------------

struct SimBatchConnector::Job {
  uint64_t id = 0;
  ResourceRef resource;
  RemoteCommand cmd;
  JobState state = JobState::queued;
  int64_t submitted_ms = -1;
  int64_t started_ms = -1;
  int64_t finished_ms = -1;
  std::atomic<bool> cancel{false};
  ProcessResult result;
};

SimBatchConnector::SimBatchConnector(fs::path root,
                                     std::vector<ServiceDecl> services,
                                     SimBatchConfig cfg)
    : site_("sim-batch", std::move(root), std::move(services)),
      cfg_(cfg),
      epoch_(std::chrono::steady_clock::now()) {
  if (cfg_.max_concurrent_jobs == 0)
    throw Error("sim-batch: max_concurrent_jobs must be >= 1");
}

SimBatchConnector::~SimBatchConnector() { teardown(); }

int64_t SimBatchConnector::now_ms() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - epoch_)
      .count();
}

std::vector<ServiceInit> SimBatchConnector::initialize() {
  return site_.initialize();
}

void SimBatchConnector::teardown() {
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) return;
    closed_ = true;
    for (const auto id : queue_) {
      auto& job = jobs_.at(id);
      job->state = JobState::cancelled;
      job->finished_ms = now_ms();
      job->result.cancelled = true;
      job->result.exit_code = -1;
    }
    queue_.clear();
    for (auto& [id, job] : jobs_)
      if (job->state == JobState::running) job->cancel.store(true);
    threads.swap(threads_);
  }
  cv_.notify_all();
  for (auto& t : threads) t.join();
}

uint64_t SimBatchConnector::submit(const ResourceRef& r, RemoteCommand cmd) {
  std::lock_guard<std::mutex> lock(mu_);
  if (closed_) throw Error("sim-batch: queue is shut down");
  auto job = std::make_shared<Job>();
  job->id = next_id_++;
  job->resource = r;
  job->cmd = std::move(cmd);
  job->submitted_ms = now_ms();
  jobs_[job->id] = job;
  queue_.push_back(job->id);
  promote_locked();
  return job->id;
}

void SimBatchConnector::promote_locked() {
  while (running_ < cfg_.max_concurrent_jobs && !queue_.empty()) {
    const uint64_t id = queue_.front();
    queue_.pop_front();
    auto job = jobs_.at(id);
    ++running_;
    threads_.emplace_back(&SimBatchConnector::run_job, this, job);
  }
}

void SimBatchConnector::run_job(std::shared_ptr<Job> job) {
  // Queue discipline: the slot is held from promotion, but the job only
  // counts as started once the submit delay has elapsed.
  const int64_t eligible = job->submitted_ms + cfg_.submit_delay_ms;
  for (int64_t now = now_ms(); now < eligible; now = now_ms()) {
    if (job->cancel.load()) break;
    std::this_thread::sleep_for(
        std::chrono::milliseconds(std::min<int64_t>(eligible - now, 10)));
  }

  ProcessResult result;
  bool cancelled = job->cancel.load();
  if (!cancelled) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      job->state = JobState::running;
      job->started_ms = now_ms();
    }
    RemoteCommand cmd = job->cmd;
    cmd.cancel = &job->cancel;
    try {
      result = site_.run(job->resource, cmd);
    } catch (const Error& e) {
      result.exit_code = 127;
      result.stderr_data = e.what();
    }
    cancelled = result.cancelled;
  } else {
    result.cancelled = true;
    result.exit_code = -1;
  }

  {
    std::lock_guard<std::mutex> lock(mu_);
    job->result = std::move(result);
    job->state = cancelled ? JobState::cancelled : JobState::done;
    job->finished_ms = now_ms();
    --running_;
    if (!closed_) promote_locked();
  }
  cv_.notify_all();
}

ProcessResult SimBatchConnector::wait(uint64_t job_id) {
  std::unique_lock<std::mutex> lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end())
    throw Error("sim-batch: unknown job id " + std::to_string(job_id));
  auto job = it->second;
  while (job->state != JobState::done && job->state != JobState::cancelled) {
    cv_.wait_for(lock,
                 std::chrono::milliseconds(std::max<int64_t>(
                     cfg_.poll_interval_ms, 1)));
    // External cancellation propagates into the job table.
    if (job->cmd.cancel && job->cmd.cancel->load() && !job->cancel.load()) {
      job->cancel.store(true);
      if (job->state == JobState::queued) {
        std::erase(queue_, job->id);
        job->state = JobState::cancelled;
        job->finished_ms = now_ms();
        job->result.cancelled = true;
        job->result.exit_code = -1;
      }
    }
  }
  return job->result;
}

ProcessResult SimBatchConnector::run(const ResourceRef& r,
                                     const RemoteCommand& cmd) {
  return wait(submit(r, cmd));
}

TransferStat SimBatchConnector::put(const fs::path& local,
                                    const ResourceRef& r,
                                    const std::string& remote) {
  return site_.put(local, r, remote);
}

TransferStat SimBatchConnector::get(const ResourceRef& r,
                                    const std::string& remote,
                                    const fs::path& local) {
  return site_.get(r, remote, local);
}

RemoteFileInfo SimBatchConnector::file_info(const ResourceRef& r,
                                            const std::string& remote) {
  return site_.file_info(r, remote);
}

std::vector<ResourceRef> SimBatchConnector::available_resources(
    const std::string& service) const {
  return site_.available_resources(service);
}

std::string SimBatchConnector::resolve(const ResourceRef& r,
                                       const std::string& remote) const {
  return site_.resolve(r, remote);
}

std::vector<JobInfo> SimBatchConnector::job_table() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<JobInfo> out;
  out.reserve(jobs_.size());
  for (const auto& [id, job] : jobs_)
    out.push_back({id, job->state, job->submitted_ms, job->started_ms,
                   job->finished_ms});
  return out;
}

}  // namespace hflow
