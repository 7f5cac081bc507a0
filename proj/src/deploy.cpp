#include "hflow/deploy.hpp"

#include <fnmatch.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <set>

namespace hflow {

namespace {

[[noreturn]] void fail_at(const YAML::Node& node, const std::string& msg) {
  throw ParseError(msg, node.Mark().line + 1, node.Mark().column + 1);
}

void expect_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                 const std::string& where) {
  for (const auto& kv : map) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key))
      fail_at(kv.first, "unknown key '" + key + "' in " + where);
  }
}

bool is_glob(const std::string& selector) {
  return selector.find_first_of("*?[") != std::string::npos;
}

}  // namespace

std::string to_string(ConnectorKind k) {
  switch (k) {
    case ConnectorKind::local: return "local";
    case ConnectorKind::sandbox: return "sandbox";
    case ConnectorKind::sim_batch: return "sim-batch";
  }
  return "?";
}

const ServiceDecl* ModelDecl::find_service(const std::string& n) const {
  for (const auto& s : services)
    if (s.name == n) return &s;
  return nullptr;
}

const ModelDecl* EnvironmentPlan::find_model(const std::string& n) const {
  for (const auto& m : models)
    if (m.name == n) return &m;
  return nullptr;
}

EnvironmentPlan parse_environment(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("environment: ") + e.msg, e.mark.line + 1,
                     e.mark.column + 1);
  }
  if (!root.IsMap()) throw ParseError("environment file must be a YAML map");
  expect_keys(root, {"deployments", "bindings", "staging_dir"}, "environment");
  if (!root["deployments"])
    throw ParseError("environment: missing 'deployments'");

  EnvironmentPlan plan;
  const auto deployments = root["deployments"];
  if (!deployments.IsMap())
    fail_at(deployments, "'deployments' must be a map");
  for (const auto& kv : deployments) {
    ModelDecl model;
    model.name = kv.first.as<std::string>();
    if (plan.find_model(model.name))
      fail_at(kv.first, "duplicate model '" + model.name + "'");
    const auto& mn = kv.second;
    if (!mn.IsMap())
      fail_at(mn, "model '" + model.name + "' must be a map");
    expect_keys(mn, {"connector", "config", "services"},
                "model '" + model.name + "'");
    if (!mn["connector"])
      fail_at(mn, "model '" + model.name + "': missing 'connector'");
    const std::string kind = mn["connector"].as<std::string>();
    if (kind == "local")
      model.kind = ConnectorKind::local;
    else if (kind == "sandbox")
      model.kind = ConnectorKind::sandbox;
    else if (kind == "sim-batch")
      model.kind = ConnectorKind::sim_batch;
    else
      fail_at(mn["connector"], "model '" + model.name +
                                   "': connector must be local, sandbox or "
                                   "sim-batch");

    const auto cfg = mn["config"];
    if (cfg && !cfg.IsMap())
      fail_at(cfg, "model '" + model.name + "': 'config' must be a map");
    const std::string cfg_where = "model '" + model.name + "' config";
    switch (model.kind) {
      case ConnectorKind::local:
        if (cfg) expect_keys(cfg, {"root"}, cfg_where);
        break;
      case ConnectorKind::sandbox:
        if (!cfg || !cfg["root"])
          fail_at(mn, cfg_where + ": sandbox requires 'root'");
        expect_keys(cfg, {"root"}, cfg_where);
        break;
      case ConnectorKind::sim_batch:
        if (!cfg || !cfg["root"])
          fail_at(mn, cfg_where + ": sim-batch requires 'root'");
        expect_keys(cfg,
                    {"root", "max_concurrent_jobs", "submit_delay_ms",
                     "poll_interval_ms"},
                    cfg_where);
        break;
    }
    if (cfg && cfg["root"]) model.root = cfg["root"].as<std::string>();
    if (cfg && cfg["max_concurrent_jobs"])
      model.batch.max_concurrent_jobs = cfg["max_concurrent_jobs"].as<uint32_t>();
    if (cfg && cfg["submit_delay_ms"])
      model.batch.submit_delay_ms = cfg["submit_delay_ms"].as<int64_t>();
    if (cfg && cfg["poll_interval_ms"])
      model.batch.poll_interval_ms = cfg["poll_interval_ms"].as<int64_t>();

    if (!mn["services"] || !mn["services"].IsMap() ||
        mn["services"].size() == 0)
      fail_at(mn, "model '" + model.name + "': needs at least one service");
    for (const auto& skv : mn["services"]) {
      ServiceDecl svc;
      svc.name = skv.first.as<std::string>();
      if (model.find_service(svc.name))
        fail_at(skv.first, "model '" + model.name + "': duplicate service '" +
                               svc.name + "'");
      if (!skv.second.IsMap())
        fail_at(skv.second, "service '" + svc.name + "' must be a map");
      expect_keys(skv.second, {"resources", "slots"},
                  "service '" + svc.name + "'");
      if (skv.second["resources"])
        svc.resources = skv.second["resources"].as<uint32_t>();
      if (skv.second["slots"]) svc.slots = skv.second["slots"].as<uint32_t>();
      if (svc.resources < 1 || svc.slots < 1)
        fail_at(skv.second, "service '" + svc.name +
                                "': resources and slots must be >= 1");
      model.services.push_back(std::move(svc));
    }
    plan.models.push_back(std::move(model));
  }

  if (root["bindings"]) {
    const auto bindings = root["bindings"];
    if (!bindings.IsSequence())
      fail_at(bindings, "'bindings' must be a sequence");
    for (const auto& bn : bindings) {
      if (!bn.IsMap()) fail_at(bn, "each binding must be a map");
      expect_keys(bn, {"step", "target", "resources"}, "binding");
      if (!bn["step"] || !bn["target"])
        fail_at(bn, "binding: 'step' and 'target' are required");
      BindingDecl b;
      b.step_selector = bn["step"].as<std::string>();
      const std::string target = bn["target"].as<std::string>();
      const auto slash = target.find('/');
      if (slash == std::string::npos || slash == 0 ||
          slash + 1 == target.size())
        fail_at(bn["target"],
                "binding target must be 'model/service', got '" + target +
                    "'");
      b.model = target.substr(0, slash);
      b.service = target.substr(slash + 1);
      if (bn["resources"]) b.resources = bn["resources"].as<uint32_t>();
      if (b.resources < 1)
        fail_at(bn["resources"], "binding resources must be >= 1");
      plan.bindings.push_back(std::move(b));
    }
  }
  if (root["staging_dir"])
    plan.staging_dir = root["staging_dir"].as<std::string>();
  return plan;
}

std::string serialize_environment(const EnvironmentPlan& plan) {
  YAML::Emitter em;
  em << YAML::BeginMap;
  em << YAML::Key << "deployments" << YAML::Value << YAML::BeginMap;
  for (const auto& m : plan.models) {
    em << YAML::Key << m.name << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "connector" << YAML::Value << to_string(m.kind);
    const bool needs_config = !m.root.empty();
    if (needs_config) {
      em << YAML::Key << "config" << YAML::Value << YAML::BeginMap;
      em << YAML::Key << "root" << YAML::Value << m.root;
      if (m.kind == ConnectorKind::sim_batch) {
        em << YAML::Key << "max_concurrent_jobs" << YAML::Value
           << m.batch.max_concurrent_jobs;
        em << YAML::Key << "submit_delay_ms" << YAML::Value
           << m.batch.submit_delay_ms;
        em << YAML::Key << "poll_interval_ms" << YAML::Value
           << m.batch.poll_interval_ms;
      }
      em << YAML::EndMap;
    }
    em << YAML::Key << "services" << YAML::Value << YAML::BeginMap;
    for (const auto& s : m.services) {
      em << YAML::Key << s.name << YAML::Value << YAML::BeginMap;
      em << YAML::Key << "resources" << YAML::Value << s.resources;
      em << YAML::Key << "slots" << YAML::Value << s.slots;
      em << YAML::EndMap;
    }
    em << YAML::EndMap << YAML::EndMap;
  }
  em << YAML::EndMap;
  if (!plan.bindings.empty()) {
    em << YAML::Key << "bindings" << YAML::Value << YAML::BeginSeq;
    for (const auto& b : plan.bindings) {
      em << YAML::BeginMap;
      em << YAML::Key << "step" << YAML::Value << b.step_selector;
      em << YAML::Key << "target" << YAML::Value << (b.model + "/" + b.service);
      em << YAML::Key << "resources" << YAML::Value << b.resources;
      em << YAML::EndMap;
    }
    em << YAML::EndSeq;
  }
  if (!plan.staging_dir.empty())
    em << YAML::Key << "staging_dir" << YAML::Value << plan.staging_dir;
  em << YAML::EndMap;
  std::string out = em.c_str();
  out.push_back('\n');
  return out;
}

std::vector<Diagnostic> validate_environment(const Workflow& w,
                                             const EnvironmentPlan& plan) {
  std::vector<Diagnostic> diags;
  auto add = [&](std::string code, std::string msg,
                 std::vector<std::string> steps = {}) {
    diags.push_back({std::move(code), std::move(msg), std::move(steps)});
  };

  std::set<std::string> selectors;
  for (const auto& b : plan.bindings) {
    if (!selectors.insert(b.step_selector).second)
      add("duplicate-binding",
          "binding selector '" + b.step_selector + "' declared twice");
    const ModelDecl* model = plan.find_model(b.model);
    if (!model) {
      add("unknown-target", "binding '" + b.step_selector +
                                "': unknown model '" + b.model + "'");
      continue;
    }
    const ServiceDecl* svc = model->find_service(b.service);
    if (!svc) {
      add("unknown-target", "binding '" + b.step_selector +
                                "': unknown service '" + b.model + "/" +
                                b.service + "'");
      continue;
    }
    if (b.resources > svc->resources)
      add("oversubscribed",
          "binding '" + b.step_selector + "': requests " +
              std::to_string(b.resources) + " resources but service '" +
              b.model + "/" + b.service + "' has " +
              std::to_string(svc->resources));
  }

  for (const auto& step : w.steps) {
    bool bound = false;
    for (const auto& b : plan.bindings) {
      if (is_glob(b.step_selector)
              ? fnmatch(b.step_selector.c_str(), step.id.c_str(), 0) == 0
              : b.step_selector == step.id) {
        bound = true;
        break;
      }
    }
    if (!bound)
      add("unbound-step", "step '" + step.id + "' matches no binding",
          {step.id});
  }
  return diags;
}

std::map<std::string, BindingDecl> resolve_bindings(
    const Workflow& w, const EnvironmentPlan& plan) {
  if (const auto diags = validate_environment(w, plan); !diags.empty())
    throw Error(diags.front().message);

  std::map<std::string, BindingDecl> out;
  for (const auto& step : w.steps) {
    const BindingDecl* best = nullptr;
    bool best_exact = false;
    for (const auto& b : plan.bindings) {
      const bool exact = !is_glob(b.step_selector);
      const bool matches =
          exact ? b.step_selector == step.id
                : fnmatch(b.step_selector.c_str(), step.id.c_str(), 0) == 0;
      if (!matches) continue;
      // Exact beats glob; among equals the later declaration wins.
      if (!best || exact >= best_exact) {
        best = &b;
        best_exact = exact;
      }
    }
    out[step.id] = *best;  // totality guaranteed above
  }
  return out;
}

// ---------------------------------------------------------------------------

Deployer::Deployer(std::vector<ModelDecl> models, Factory factory)
    : models_(std::move(models)), factory_(std::move(factory)) {}

Deployer::~Deployer() { undeploy_all(); }

const ModelDecl& Deployer::decl(const std::string& model) const {
  for (const auto& m : models_)
    if (m.name == model) return m;
  throw Error("unknown model '" + model + "'");
}

Connector& Deployer::ensure_deployed(const std::string& model) {
  std::unique_lock<std::mutex> lock(mu_);
  Entry& entry = entries_[model];
  for (;;) {
    switch (entry.state) {
      case Entry::State::up:
        return *entry.connector;
      case Entry::State::failed:
        throw Error(entry.error);
      case Entry::State::deploying:
        cv_.wait(lock);
        continue;
      case Entry::State::idle:
        break;
    }
    entry.state = Entry::State::deploying;
    lock.unlock();
    std::unique_ptr<Connector> connector;
    std::string error;
    std::vector<ServiceInit> inits;
    WallTime deployed_at = WallClock::now();
    try {
      connector = factory_(decl(model));
      inits = connector->initialize();
    } catch (const std::exception& e) {
      error = "deploy of model '" + model + "' failed: " + e.what();
    }
    lock.lock();
    if (error.empty()) {
      entry.connector = std::move(connector);
      entry.record = {model, deployed_at, {}, false, std::move(inits)};
      entry.state = Entry::State::up;
    } else {
      entry.error = error;
      entry.state = Entry::State::failed;
    }
    cv_.notify_all();
  }
}

void Deployer::undeploy_all() {
  std::lock_guard<std::mutex> lock(mu_);
  for (auto& [name, entry] : entries_) {
    if (entry.state != Entry::State::up) continue;
    entry.connector->teardown();
    entry.connector.reset();
    entry.record.undeployed_at = WallClock::now();
    entry.record.undeployed = true;
    entry.state = Entry::State::idle;
  }
}

std::vector<DeployRecord> Deployer::records() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<DeployRecord> out;
  for (const auto& [name, entry] : entries_)
    if (!entry.record.model.empty()) out.push_back(entry.record);
  return out;
}

// ---------------------------------------------------------------------------

Scheduler::Scheduler(const std::vector<ModelDecl>& models) {
  for (const auto& m : models)
    for (const auto& s : m.services)
      services_[{m.name, s.name}].free_slots.assign(s.resources, s.slots);
}

Reservation Scheduler::acquire(const std::string& model,
                               const std::string& service, uint32_t count,
                               const std::vector<std::string>& ref_ids,
                               const LocalityProbe& locality,
                               const std::atomic<bool>& cancel) {
  std::unique_lock<std::mutex> lock(mu_);
  const auto it = services_.find({model, service});
  if (it == services_.end())
    throw Error("unknown service '" + model + "/" + service + "'");
  ServiceState& state = it->second;
  if (count > state.free_slots.size())
    throw Error("reservation of " + std::to_string(count) +
                " resources exceeds service '" + model + "/" + service + "'");

  const uint64_t ticket = state.next_ticket++;
  state.queue.push_back(ticket);
  std::vector<uint32_t> picked;
  for (;;) {
    if (cancel.load()) {
      std::erase(state.queue, ticket);
      cv_.notify_all();
      throw Error("cancelled");
    }
    if (state.queue.front() == ticket) {
      std::vector<uint32_t> candidates;
      for (uint32_t i = 0; i < state.free_slots.size(); ++i)
        if (state.free_slots[i] > 0) candidates.push_back(i);
      if (candidates.size() >= count) {
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](uint32_t a, uint32_t b) {
                           return locality(model, {service, a}, ref_ids) >
                                  locality(model, {service, b}, ref_ids);
                         });
        picked.assign(candidates.begin(), candidates.begin() + count);
        std::sort(picked.begin() + 1, picked.end());
        for (const uint32_t i : picked) --state.free_slots[i];
        state.queue.pop_front();
        break;
      }
    }
    cv_.wait_for(lock, std::chrono::milliseconds(100));
  }
  cv_.notify_all();
  return {model, service, std::move(picked)};
}

void Scheduler::release(const Reservation& r) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    ServiceState& state = services_.at({r.model, r.service});
    for (const uint32_t i : r.indices) ++state.free_slots[i];
  }
  cv_.notify_all();
}

void Scheduler::cancel_waiters() { cv_.notify_all(); }

}  // namespace hflow
