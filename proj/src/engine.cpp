#include "hflow/engine.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "hflow/data_manager.hpp"
#include "hflow/unfold.hpp"

namespace hflow {

namespace fs = std::filesystem;

namespace {

constexpr uint32_t kDefaultWorkers = 64;

std::vector<std::string> whitespace_split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& value) {
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

std::string json_quote(const std::string& s) {
  return nlohmann::json(s).dump();
}

struct SplitInfo {
  bool known = false;
  uint32_t flat_size = 0;
  std::vector<uint32_t> axis_sizes;  // per split port, declaration order
};

enum class InstState { ready, scheduled, running, done, failed, cancelled };

struct Instance {
  std::string step;
  Tag tag;
  std::map<std::string, Payload> inputs;
  InstState state = InstState::ready;
  InstanceRecord record;
  std::string error;
};

struct Engine {
  const Workflow& w;
  const EnvironmentPlan& plan;
  const RunOptions& opts;
  fs::path outdir;

  WorkflowPlan unfolded;
  std::map<std::string, BindingDecl> bindings;
  std::unique_ptr<Deployer> deployer;
  std::unique_ptr<Scheduler> scheduler;
  std::unique_ptr<DataManager> data;

  std::mutex mu;
  std::condition_variable work_cv;
  std::condition_variable done_cv;
  // (producer step or "inputs", port) → tag → payload
  std::map<std::pair<std::string, std::string>, std::map<Tag, Payload>> tokens;
  std::map<std::string, SplitInfo> splits;
  std::map<std::pair<std::string, Tag>, Instance> instances;
  std::deque<Instance*> ready;
  size_t outstanding = 0;  // ready + scheduled + running
  bool finished = false;
  std::atomic<bool> cancel{false};
  std::vector<std::string> errors;

  Engine(const Workflow& w_, const EnvironmentPlan& plan_,
         const RunOptions& opts_, fs::path outdir_)
      : w(w_), plan(plan_), opts(opts_), outdir(std::move(outdir_)) {}

  // ---- setup -------------------------------------------------------------

  fs::path model_root(const ModelDecl& m) const {
    if (m.root.empty()) return outdir / "sites" / m.name;
    fs::path root = m.root;
    if (root.is_relative()) root = outdir / root;
    return root;
  }

  std::unique_ptr<Connector> make_connector(const ModelDecl& m) const {
    const fs::path root = fs::absolute(model_root(m));
    switch (m.kind) {
      case ConnectorKind::local:
        return std::make_unique<DirSiteConnector>("local", root, m.services);
      case ConnectorKind::sandbox:
        return std::make_unique<DirSiteConnector>("sandbox", root,
                                                  m.services);
      case ConnectorKind::sim_batch:
        return std::make_unique<SimBatchConnector>(root, m.services, m.batch);
    }
    throw Error("unreachable connector kind");
  }

  void setup() {
    if (!validate(w).empty())
      throw Error("workflow has validation diagnostics; refusing to run");
    unfolded = unfold_plan(w);
    bindings = resolve_bindings(w, plan);

    fs::path staging = plan.staging_dir.empty()
                           ? outdir / "staging"
                           : fs::path(plan.staging_dir);
    if (staging.is_relative()) staging = outdir / plan.staging_dir;

    deployer = std::make_unique<Deployer>(
        plan.models, [this](const ModelDecl& m) { return make_connector(m); });
    scheduler = std::make_unique<Scheduler>(plan.models);
    data = std::make_unique<DataManager>(
        fs::absolute(staging), [this](const std::string& model) -> Connector& {
          return deployer->ensure_deployed(model);
        });
    if (opts.disable_staging) data->disable_staging();

    for (const auto& in : w.inputs)
      tokens[{"inputs", in.name}][{}] = import_input(in);
  }

  Payload import_input(const WorkflowInput& in) {
    if (in.kind == PortKind::value) return in.default_value;
    // File inputs: leaf texts are paths, imported into staging.
    std::function<Payload(const Payload&)> import =
        [&](const Payload& p) -> Payload {
      if (p.kind == Payload::Kind::list) {
        std::vector<Payload> items;
        for (const auto& item : p.items) items.push_back(import(item));
        return Payload::list(std::move(items));
      }
      return Payload::ref(
          data->register_input_file(in.name, fs::path(p.text)).id);
    };
    return import(in.default_value);
  }

  // ---- token plumbing (all under mu) ---------------------------------------

  const Payload* token_at(const std::string& producer, const std::string& port,
                          const Tag& tag) const {
    const auto it = tokens.find({producer, port});
    if (it == tokens.end()) return nullptr;
    const auto jt = it->second.find(tag);
    return jt == it->second.end() ? nullptr : &jt->second;
  }

  struct SourceRef {
    std::string producer;  // "inputs" or step id
    std::string port;
    uint32_t depth = 0;
    const std::vector<std::string>* anchors = nullptr;
  };

  SourceRef source_of(const std::string& step_id,
                      const std::string& port_name) const {
    static const std::vector<std::string> kNone;
    const Step& step = *w.find_step(step_id);
    const InPort& port = *step.find_input(port_name);
    std::string src_step, src_port;
    if (!split_port_ref(port.from, &src_step, &src_port))
      return {"inputs", port.from.substr(7), 0, &kNone};
    const StepPlan& sp = unfolded.steps.at(src_step);
    return {src_step, src_port, sp.depth, &sp.level_anchors};
  }

  // Collects the (possibly nested) gathered payload for tags extending
  // `prefix` through the source's remaining levels. Returns nullopt when
  // some token has not arrived yet.
  std::optional<Payload> collect(const SourceRef& src, const Tag& prefix,
                                 uint32_t level) const {
    if (level == src.depth) {
      const Payload* p = token_at(src.producer, src.port, prefix);
      if (!p) return std::nullopt;
      return *p;
    }
    const auto it = splits.find((*src.anchors)[level]);
    if (it == splits.end() || !it->second.known) return std::nullopt;
    std::vector<Payload> items;
    items.reserve(it->second.flat_size);
    for (uint32_t i = 0; i < it->second.flat_size; ++i) {
      Tag t = prefix;
      t.push_back(i);
      auto sub = collect(src, t, level + 1);
      if (!sub) return std::nullopt;
      items.push_back(std::move(*sub));
    }
    return Payload::list(std::move(items));
  }

  // Records the split sizes of `step` once every split-port list has
  // arrived. Returns false while sources are still missing.
  bool resolve_split(const std::string& step_id, const StepPlan& sp) {
    auto it = splits.find(step_id);
    if (it != splits.end() && it->second.known) return true;
    std::vector<uint32_t> axis;
    for (const auto& port : sp.split_ports) {
      const SourceRef src = source_of(step_id, port);
      const Payload* p = token_at(src.producer, src.port, {});
      if (!p) return false;
      const Payload payload = resolve_ref_list(*p);
      if (payload.kind != Payload::Kind::list)
        throw Error("step '" + step_id + "': scatter over non-list input '" +
                    port + "'");
      axis.push_back(static_cast<uint32_t>(payload.items.size()));
    }
    SplitInfo info;
    info.known = true;
    info.axis_sizes = axis;
    if (sp.method == ScatterMethod::dot) {
      for (const uint32_t n : axis)
        if (n != axis.front())
          throw Error("step '" + step_id +
                      "': dot scatter joins lists of unequal length");
      info.flat_size = axis.empty() ? 0 : axis.front();
    } else {
      uint64_t product = 1;
      for (const uint32_t n : axis) product *= n;
      info.flat_size = static_cast<uint32_t>(product);
    }
    splits[step_id] = std::move(info);
    return true;
  }

  // A scattered list may itself be a value ref holding JSON; splits act
  // on payload lists only, so refs pass through unchanged here.
  static Payload resolve_ref_list(const Payload& p) { return p; }

  // Element of a split port for instance index `idx` at the split level.
  Payload split_element(const std::string& step_id, const StepPlan& sp,
                        const std::string& port, uint32_t idx) const {
    const SplitInfo& info = splits.at(step_id);
    const auto port_pos =
        std::find(sp.split_ports.begin(), sp.split_ports.end(), port) -
        sp.split_ports.begin();
    uint32_t element_idx;
    if (sp.method == ScatterMethod::dot) {
      element_idx = idx;
    } else {
      // Row-major decomposition over the split ports in declaration
      // order: the last axis varies fastest.
      uint32_t rest = idx;
      std::vector<uint32_t> coords(info.axis_sizes.size());
      for (size_t k = info.axis_sizes.size(); k-- > 0;) {
        coords[k] = rest % info.axis_sizes[k];
        rest /= info.axis_sizes[k];
      }
      element_idx = coords[static_cast<size_t>(port_pos)];
    }
    const SourceRef src = source_of(step_id, port);
    return token_at(src.producer, src.port, {})->items[element_idx];
  }

  // Try to resolve every input of (step, tag); nullopt when not ready.
  std::optional<std::map<std::string, Payload>> resolve_inputs(
      const Step& step, const StepPlan& sp, const Tag& tag) {
    std::map<std::string, Payload> resolved;
    for (const auto& port : step.inputs) {
      const PortPlan& pp = sp.ports.at(port.name);
      const SourceRef src = source_of(step.id, port.name);
      const bool scattered =
          std::count(step.scatter.begin(), step.scatter.end(), port.name) > 0;
      if (scattered && pp.cls == EdgeClass::scatter_split) {
        resolved[port.name] =
            split_element(step.id, sp, port.name, tag[sp.base_depth]);
        continue;
      }
      if (scattered) {  // ride: element-wise at the source's own depth
        const Payload* p =
            token_at(src.producer, src.port, tag_prefix(tag, src.depth));
        if (!p) return std::nullopt;
        resolved[port.name] = *p;
        continue;
      }
      const uint32_t align = src.depth - pp.gather_levels;
      auto payload = collect(src, tag_prefix(tag, align), align);
      if (!payload) return std::nullopt;
      resolved[port.name] = std::move(*payload);
    }
    return resolved;
  }

  // Enumerate the tag space of a step given currently known split sizes;
  // nullopt while an anchor's size is still unknown.
  std::optional<std::vector<Tag>> enumerate_tags(const StepPlan& sp) {
    std::vector<Tag> tags{{}};
    for (uint32_t level = 0; level < sp.depth; ++level) {
      const auto it = splits.find(sp.level_anchors[level]);
      if (it == splits.end() || !it->second.known) return std::nullopt;
      std::vector<Tag> next;
      next.reserve(tags.size() * it->second.flat_size);
      for (const auto& t : tags)
        for (uint32_t i = 0; i < it->second.flat_size; ++i) {
          Tag e = t;
          e.push_back(i);
          next.push_back(std::move(e));
        }
      tags = std::move(next);
    }
    return tags;
  }

  // Monotone fixpoint: create every instance whose tokens all exist.
  // Caller holds mu. Runtime-detected structural failures (scatter over a
  // non-list, unequal dot lengths) cancel the run instead of throwing.
  void pump() {
    if (cancel.load()) return;
    try {
      pump_unguarded();
    } catch (const Error& e) {
      errors.push_back(e.what());
      cancel.store(true);
      scheduler->cancel_waiters();
    }
    work_cv.notify_all();
  }

  void pump_unguarded() {
    bool progress = true;
    while (progress) {
      progress = false;
      for (const auto& id : unfolded.topo_order) {
        const Step& step = *w.find_step(id);
        const StepPlan& sp = unfolded.steps.at(id);
        if (!sp.split_ports.empty() && !resolve_split(id, sp)) continue;
        const auto tags = enumerate_tags(sp);
        if (!tags) continue;
        for (const auto& tag : *tags) {
          if (instances.count({id, tag})) continue;
          auto inputs = resolve_inputs(step, sp, tag);
          if (!inputs) continue;
          Instance& inst = instances[{id, tag}];
          inst.step = id;
          inst.tag = tag;
          inst.inputs = std::move(*inputs);
          inst.record.step = id;
          inst.record.tag = tag;
          inst.record.queued_at = WallClock::now();
          const BindingDecl& b = bindings.at(id);
          inst.record.model = b.model;
          inst.record.service = b.service;
          ready.push_back(&inst);
          ++outstanding;
          progress = true;
        }
      }
    }
  }

  void fail_run(const std::string& message) {
    {
      std::lock_guard<std::mutex> lock(mu);
      errors.push_back(message);
    }
    cancel.store(true);
    scheduler->cancel_waiters();
    work_cv.notify_all();
  }

  // ---- instance execution (no engine lock held) ----------------------------

  void collect_file_refs(const Payload& p, std::vector<std::string>* out) {
    if (p.kind == Payload::Kind::ref &&
        data->ref(p.text).port_kind == PortKind::file)
      out->push_back(p.text);
    for (const auto& item : p.items) collect_file_refs(item, out);
  }

  std::string read_value_ref(const std::string& ref_id) {
    std::ifstream in(data->controller_path(ref_id), std::ios::binary);
    if (!in)
      throw Error("cannot read staged value for reference " + ref_id);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
  }

  std::string json_payload(const Payload& p, Connector& conn,
                           const std::string& model, const ResourceRef& rank0,
                           std::vector<TransferRecord>* log) {
    switch (p.kind) {
      case Payload::Kind::value:
        return json_quote(p.text);
      case Payload::Kind::ref: {
        const DataRef& ref = data->ref(p.text);
        if (ref.port_kind == PortKind::value)
          return json_quote(read_value_ref(p.text));
        stage_ref(p.text, model, rank0, log);
        return json_quote(conn.resolve(rank0, data->path_at(p.text, model, rank0)));
      }
      case Payload::Kind::list: {
        std::string out = "[";
        for (size_t i = 0; i < p.items.size(); ++i) {
          if (i) out.push_back(',');
          out += json_payload(p.items[i], conn, model, rank0, log);
        }
        out.push_back(']');
        return out;
      }
    }
    throw Error("unreachable payload kind");
  }

  void stage_ref(const std::string& ref_id, const std::string& model,
                 const ResourceRef& rank0, std::vector<TransferRecord>* log) {
    auto records = data->ensure_at(ref_id, model, rank0);
    log->insert(log->end(), records.begin(), records.end());
  }

  std::string substitute(const Payload& p, PortKind declared, Connector& conn,
                         const std::string& model, const ResourceRef& rank0,
                         std::vector<TransferRecord>* log) {
    (void)declared;
    switch (p.kind) {
      case Payload::Kind::value:
        return p.text;
      case Payload::Kind::ref: {
        const DataRef& ref = data->ref(p.text);
        if (ref.port_kind == PortKind::value) return read_value_ref(p.text);
        stage_ref(p.text, model, rank0, log);
        return conn.resolve(rank0, data->path_at(p.text, model, rank0));
      }
      case Payload::Kind::list:
        return json_payload(p, conn, model, rank0, log);
    }
    throw Error("unreachable payload kind");
  }

  struct AttemptResult {
    bool ok = false;
    bool cancelled = false;
    bool fatal = false;  // not retryable (deploy failures)
    int exit_code = -1;
    std::string error;
    std::vector<std::string> output_refs;
    std::map<std::string, Payload> outputs;  // port → ref payload
  };

  AttemptResult run_attempt(Instance& inst, uint32_t attempt) {
    AttemptResult out;
    const Step& step = *w.find_step(inst.step);
    const BindingDecl& b = bindings.at(inst.step);

    Connector* conn = nullptr;
    try {
      conn = &deployer->ensure_deployed(b.model);
    } catch (const std::exception& e) {
      out.fatal = true;
      out.error = e.what();
      return out;
    }

    std::vector<std::string> locality_refs;
    for (const auto& [name, payload] : inst.inputs)
      collect_file_refs(payload, &locality_refs);

    Reservation reservation;
    try {
      reservation = scheduler->acquire(
          b.model, b.service, b.resources, locality_refs,
          [this](const std::string& model, const ResourceRef& r,
                 const std::vector<std::string>& ids) {
            return data->locality_count(ids, model, r);
          },
          cancel);
    } catch (const Error&) {
      out.cancelled = true;
      return out;
    }

    const ResourceRef rank0{reservation.service, reservation.indices[0]};
    {
      std::lock_guard<std::mutex> lock(mu);
      inst.state = InstState::running;
      inst.record.started_at = WallClock::now();
      inst.record.resources = reservation.indices;
    }

    std::string workdir = "work/" + inst.step;
    if (!inst.tag.empty()) workdir += "_" + tag_to_string(inst.tag);
    workdir += "/a" + std::to_string(attempt);

    try {
      std::vector<TransferRecord> transfers;
      std::map<std::string, std::string> args;
      for (const auto& port : step.inputs)
        args[port.name] = substitute(inst.inputs.at(port.name), port.kind,
                                     *conn, b.model, rank0, &transfers);
      args["outdir"] = conn->resolve(rank0, workdir + "/out");

      RemoteCommand cmd;
      cmd.shell = step.shell;
      cmd.workdir = workdir;
      cmd.make_dirs = {workdir + "/out"};
      cmd.cancel = &cancel;
      if (step.shell) {
        cmd.script = step.command;
        for (const auto& [name, value] : args)
          cmd.script = replace_all(cmd.script, "{" + name + "}", value);
      } else {
        for (auto& word : whitespace_split(step.command)) {
          for (const auto& [name, value] : args)
            word = replace_all(word, "{" + name + "}", value);
          cmd.argv.push_back(std::move(word));
        }
      }
      const char* base_path = ::getenv("PATH");
      cmd.env["PATH"] = opts.tool_dir.empty()
                            ? std::string(base_path ? base_path : "")
                            : opts.tool_dir + ":" +
                                  (base_path ? base_path : "");
      cmd.env["HF_SEED"] = std::to_string(opts.seed);
      std::string hf_resources;
      for (const uint32_t idx : reservation.indices) {
        if (!hf_resources.empty()) hf_resources.push_back(',');
        hf_resources +=
            b.model + "/" + b.service + "/" + std::to_string(idx);
      }
      cmd.env["HF_RESOURCES"] = hf_resources;

      ProcessResult result = conn->run(rank0, cmd);

      {
        std::lock_guard<std::mutex> lock(mu);
        inst.record.transfers.insert(inst.record.transfers.end(),
                                     transfers.begin(), transfers.end());
      }
      out.exit_code = result.exit_code;
      if (result.cancelled || cancel.load()) {
        out.cancelled = true;
      } else if (result.exit_code != 0) {
        out.error = "step '" + inst.step + "' [" + tag_to_string(inst.tag) +
                    "] exited with code " + std::to_string(result.exit_code);
        if (!result.stderr_data.empty()) {
          out.error += ": ";
          out.error += result.stderr_data.substr(0, 4096);
        }
      } else {
        for (const auto& port : step.outputs) {
          if (port.kind == PortKind::file) {
            const DataRef ref = data->register_file_output(
                inst.step, inst.tag, port.name, b.model, rank0,
                workdir + "/out/" + port.capture);
            out.outputs[port.name] = Payload::ref(ref.id);
            out.output_refs.push_back(ref.id);
          } else {
            const DataRef ref = data->register_value_output(
                inst.step, inst.tag, port.name, b.model, rank0,
                result.stdout_data);
            out.outputs[port.name] = Payload::ref(ref.id);
            out.output_refs.push_back(ref.id);
          }
        }
        out.ok = true;
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    {
      // Stamp before releasing the slot so no two recorded intervals on
      // one slot ever overlap; validators rely on that ordering.
      std::lock_guard<std::mutex> lock(mu);
      inst.record.finished_at = WallClock::now();
    }
    scheduler->release(reservation);
    return out;
  }

  void execute_instance(Instance& inst) {
    for (uint32_t attempt = 1;; ++attempt) {
      {
        std::lock_guard<std::mutex> lock(mu);
        inst.record.attempts = attempt;
      }
      AttemptResult result = run_attempt(inst, attempt);

      std::unique_lock<std::mutex> lock(mu);
      if (inst.record.finished_at == WallTime{})  // never reached a resource
        inst.record.finished_at = WallClock::now();
      if (inst.record.started_at == WallTime{})  // cancelled before start
        inst.record.started_at = inst.record.finished_at;
      inst.record.exit_code = result.exit_code;
      if (result.cancelled || (cancel.load() && !result.ok)) {
        inst.state = InstState::cancelled;
        inst.record.state = "cancelled";
      } else if (result.ok) {
        inst.state = InstState::done;
        inst.record.state = "done";
        inst.record.outputs = result.output_refs;
        for (const auto& [port, payload] : result.outputs)
          tokens[{inst.step, port}][inst.tag] = payload;
        pump();
      } else if (!result.fatal && attempt <= opts.retries) {
        lock.unlock();
        continue;  // fresh attempt, fresh workdir
      } else {
        inst.state = InstState::failed;
        inst.record.state = "failed";
        inst.error = result.error;
        lock.unlock();
        fail_run(result.error);
        lock.lock();
      }
      --outstanding;
      if (outstanding == 0) done_cv.notify_all();
      return;
    }
  }

  void worker() {
    for (;;) {
      Instance* inst = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu);
        work_cv.wait(lock, [&] {
          return finished || cancel.load() || !ready.empty();
        });
        if (ready.empty()) return;  // finished, or cancelled and drained
        inst = ready.front();
        ready.pop_front();
        if (cancel.load()) {
          // Drain without running; never-attempted instances stay out
          // of the report.
          inst->state = InstState::cancelled;
          inst->record.state = "cancelled";
          --outstanding;
          if (outstanding == 0) done_cv.notify_all();
          continue;
        }
        inst->state = InstState::scheduled;
      }
      execute_instance(*inst);
    }
  }

  // ---- output materialization ----------------------------------------------

  void materialize(const Payload& p, const fs::path& dest) {
    switch (p.kind) {
      case Payload::Kind::value: {
        fs::create_directories(dest.parent_path());
        std::ofstream out(dest, std::ios::binary);
        out << p.text;
        if (!out) throw Error("cannot write output: " + dest.string());
        return;
      }
      case Payload::Kind::ref: {
        auto records = data->ensure_controller(p.text);
        attribute_transfers(p.text, records);
        fs::create_directories(dest.parent_path());
        fs::copy_file(data->controller_path(p.text), dest,
                      fs::copy_options::overwrite_existing);
        return;
      }
      case Payload::Kind::list: {
        fs::create_directories(dest);
        for (size_t i = 0; i < p.items.size(); ++i)
          materialize(p.items[i], dest / std::to_string(i));
        return;
      }
    }
  }

  void attribute_transfers(const std::string& ref_id,
                           const std::vector<TransferRecord>& records) {
    if (records.empty()) return;
    const DataRef& ref = data->ref(ref_id);
    std::lock_guard<std::mutex> lock(mu);
    const auto it = instances.find({ref.step, ref.tag});
    if (it == instances.end()) return;
    it->second.record.transfers.insert(it->second.record.transfers.end(),
                                       records.begin(), records.end());
  }

  std::optional<Payload> output_payload(const WorkflowOutput& out) {
    std::string src_step, src_port;
    split_port_ref(out.from, &src_step, &src_port);
    const StepPlan& sp = unfolded.steps.at(src_step);
    SourceRef src{src_step, src_port, sp.depth, &sp.level_anchors};
    std::lock_guard<std::mutex> lock(mu);
    return collect(src, {}, 0);
  }

  // ---- top level -------------------------------------------------------

  EngineOutcome run() {
    EngineOutcome outcome;
    outcome.report.seed = opts.seed;
    outcome.report.started = WallClock::now();

    setup();
    {
      std::lock_guard<std::mutex> lock(mu);
      pump();
      if (outstanding == 0) finished = true;
    }

    if (!finished) {
      const uint32_t n_workers =
          opts.max_concurrency == 0
              ? kDefaultWorkers
              : std::min(opts.max_concurrency, 4u * kDefaultWorkers);
      std::vector<std::thread> workers;
      workers.reserve(n_workers);
      for (uint32_t i = 0; i < n_workers; ++i)
        workers.emplace_back([this] { worker(); });
      {
        std::unique_lock<std::mutex> lock(mu);
        done_cv.wait(lock, [&] { return outstanding == 0; });
        finished = true;
      }
      work_cv.notify_all();
      for (auto& t : workers) t.join();
    }

    bool all_done = errors.empty();
    for (const auto& [key, inst] : instances)
      if (inst.state != InstState::done) all_done = false;

    if (all_done) {
      for (const auto& out : w.outputs) {
        auto payload = output_payload(out);
        if (!payload) {
          all_done = false;
          errors.push_back("workflow output '" + out.name +
                           "' was never produced");
          break;
        }
        outcome.outputs[out.name] = *payload;
        const fs::path dest = outdir / "outputs" / out.name;
        materialize(*payload, dest);
        outcome.report.outputs.push_back(
            {out.name, "outputs/" + out.name});
      }
    }

    deployer->undeploy_all();

    outcome.success = all_done;
    outcome.report.status = all_done ? "success" : "failed";
    outcome.report.finished = WallClock::now();
    outcome.report.deployments = deployer->records();
    for (const auto& [key, inst] : instances)
      if (inst.record.attempts >= 1)
        outcome.report.instances.push_back(inst.record);
    outcome.errors = errors;
    return outcome;
  }
};

}  // namespace

EngineOutcome execute(const Workflow& w, const EnvironmentPlan& plan,
                      const fs::path& outdir, const RunOptions& opts) {
  fs::create_directories(outdir);
  Engine engine(w, plan, opts, fs::absolute(outdir));
  return engine.run();
}

}  // namespace hflow
