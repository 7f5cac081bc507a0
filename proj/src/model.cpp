#include "hflow/model.hpp"

#include <yaml-cpp/yaml.h>

#include "hflow/unfold.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

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

PortKind parse_kind(const YAML::Node& node, const std::string& where) {
  const std::string s = node.as<std::string>();
  if (s == "value") return PortKind::value;
  if (s == "file") return PortKind::file;
  fail_at(node, where + ": type must be 'value' or 'file', got '" + s + "'");
}

nlohmann::ordered_json yaml_to_json(const YAML::Node& node) {
  if (node.IsMap()) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (const auto& kv : node)
      obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
    return obj;
  }
  if (node.IsSequence()) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& el : node) arr.push_back(yaml_to_json(el));
    return arr;
  }
  if (node.Tag() == "!") return node.as<std::string>();  // quoted scalar
  if (int64_t i; YAML::convert<int64_t>::decode(node, i)) return i;
  if (double d; YAML::convert<double>::decode(node, d)) return d;
  if (bool b; YAML::convert<bool>::decode(node, b)) return b;
  return node.as<std::string>();
}

Payload parse_default(const YAML::Node& node) {
  if (node.IsSequence()) {
    std::vector<Payload> items;
    for (const auto& el : node) items.push_back(parse_default(el));
    return Payload::list(std::move(items));
  }
  if (node.IsMap()) {
    // Maps flow through commands as compact JSON objects.
    return Payload::value(yaml_to_json(node).dump());
  }
  return Payload::value(node.as<std::string>());
}

YAML::Node emit_default(const Payload& p) {
  if (p.kind == Payload::Kind::list) {
    YAML::Node n(YAML::NodeType::Sequence);
    for (const auto& item : p.items) n.push_back(emit_default(item));
    return n;
  }
  return YAML::Node(p.text);
}

bool has_upward_traversal(const std::string& rel) {
  if (rel.empty() || rel.front() == '/') return true;
  std::stringstream ss(rel);
  std::string part;
  while (std::getline(ss, part, '/'))
    if (part == "..") return true;
  return false;
}

}  // namespace

const InPort* Step::find_input(const std::string& n) const {
  for (const auto& p : inputs)
    if (p.name == n) return &p;
  return nullptr;
}

const OutPort* Step::find_output(const std::string& n) const {
  for (const auto& p : outputs)
    if (p.name == n) return &p;
  return nullptr;
}

const Step* Workflow::find_step(const std::string& id) const {
  for (const auto& s : steps)
    if (s.id == id) return &s;
  return nullptr;
}

const WorkflowInput* Workflow::find_input(const std::string& n) const {
  for (const auto& i : inputs)
    if (i.name == n) return &i;
  return nullptr;
}

bool split_port_ref(const std::string& ref, std::string* step,
                    std::string* port) {
  const auto dot = ref.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == ref.size())
    return false;
  *step = ref.substr(0, dot);
  *port = ref.substr(dot + 1);
  return *step != "inputs";
}

std::vector<std::string> command_placeholders(const std::string& command) {
  std::vector<std::string> names;
  for (size_t i = 0; i < command.size(); ++i) {
    if (command[i] != '{') continue;
    const auto close = command.find('}', i);
    if (close == std::string::npos) break;
    const std::string name = command.substr(i + 1, close - i - 1);
    if (name.empty()) continue;
    bool ident = std::isalpha(static_cast<unsigned char>(name[0])) ||
                 name[0] == '_';
    for (char c : name)
      ident = ident && (std::isalnum(static_cast<unsigned char>(c)) ||
                        c == '_');
    if (ident && std::find(names.begin(), names.end(), name) == names.end())
      names.push_back(name);
    i = close;
  }
  return names;
}

Workflow parse_workflow(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("workflow: ") + e.msg, e.mark.line + 1,
                     e.mark.column + 1);
  }
  if (!root.IsMap()) throw ParseError("workflow file must be a YAML map");
  expect_keys(root, {"name", "inputs", "steps", "outputs"}, "workflow");
  if (!root["name"]) throw ParseError("workflow: missing 'name'");
  if (!root["steps"]) throw ParseError("workflow: missing 'steps'");

  Workflow w;
  w.name = root["name"].as<std::string>();

  if (root["inputs"]) {
    const auto inputs = root["inputs"];
    if (!inputs.IsMap()) fail_at(inputs, "'inputs' must be a map");
    for (const auto& kv : inputs) {
      WorkflowInput in;
      in.name = kv.first.as<std::string>();
      if (w.find_input(in.name))
        fail_at(kv.first, "duplicate workflow input '" + in.name + "'");
      if (!kv.second.IsMap())
        fail_at(kv.second, "input '" + in.name + "' must be a map");
      expect_keys(kv.second, {"type", "default"}, "input '" + in.name + "'");
      if (!kv.second["type"])
        fail_at(kv.second, "input '" + in.name + "': missing 'type'");
      in.kind = parse_kind(kv.second["type"], "input '" + in.name + "'");
      if (kv.second["default"])
        in.default_value = parse_default(kv.second["default"]);
      w.inputs.push_back(std::move(in));
    }
  }

  const auto steps = root["steps"];
  if (!steps.IsSequence()) fail_at(steps, "'steps' must be a sequence");
  for (const auto& sn : steps) {
    if (!sn.IsMap()) fail_at(sn, "each step must be a map");
    expect_keys(sn, {"id", "command", "shell", "in", "out", "scatter",
                     "scatter_method"},
                "step");
    if (!sn["id"]) fail_at(sn, "step: missing 'id'");
    Step step;
    step.id = sn["id"].as<std::string>();
    const std::string where = "step '" + step.id + "'";
    if (w.find_step(step.id)) fail_at(sn["id"], "duplicate step id '" + step.id + "'");
    if (!sn["command"]) fail_at(sn, where + ": missing 'command'");
    step.command = sn["command"].as<std::string>();
    if (sn["shell"]) step.shell = sn["shell"].as<bool>();

    if (sn["in"]) {
      if (!sn["in"].IsMap()) fail_at(sn["in"], where + ": 'in' must be a map");
      for (const auto& kv : sn["in"]) {
        InPort p;
        p.name = kv.first.as<std::string>();
        if (step.find_input(p.name))
          fail_at(kv.first, where + ": duplicate input port '" + p.name + "'");
        if (!kv.second.IsMap())
          fail_at(kv.second, where + "." + p.name + " must be a map");
        expect_keys(kv.second, {"from", "type"}, where + "." + p.name);
        if (!kv.second["from"] || !kv.second["type"])
          fail_at(kv.second,
                  where + "." + p.name + ": 'from' and 'type' are required");
        p.from = kv.second["from"].as<std::string>();
        p.kind = parse_kind(kv.second["type"], where + "." + p.name);
        step.inputs.push_back(std::move(p));
      }
    }

    if (sn["out"]) {
      if (!sn["out"].IsMap())
        fail_at(sn["out"], where + ": 'out' must be a map");
      for (const auto& kv : sn["out"]) {
        OutPort p;
        p.name = kv.first.as<std::string>();
        if (step.find_output(p.name))
          fail_at(kv.first,
                  where + ": duplicate output port '" + p.name + "'");
        if (!kv.second.IsMap())
          fail_at(kv.second, where + "." + p.name + " must be a map");
        expect_keys(kv.second, {"type", "capture"}, where + "." + p.name);
        if (!kv.second["type"])
          fail_at(kv.second, where + "." + p.name + ": missing 'type'");
        p.kind = parse_kind(kv.second["type"], where + "." + p.name);
        if (kv.second["capture"])
          p.capture = kv.second["capture"].as<std::string>();
        else if (p.kind == PortKind::file)
          fail_at(kv.second,
                  where + "." + p.name + ": file output needs 'capture'");
        if (p.kind == PortKind::value && p.capture != "stdout")
          fail_at(kv.second, where + "." + p.name +
                                 ": value outputs capture 'stdout' only");
        if (p.kind == PortKind::file && has_upward_traversal(p.capture))
          fail_at(kv.second, where + "." + p.name +
                                 ": capture path must be relative with no "
                                 "upward traversal");
        step.outputs.push_back(std::move(p));
      }
    }

    if (sn["scatter"]) {
      if (!sn["scatter"].IsSequence())
        fail_at(sn["scatter"], where + ": 'scatter' must be a sequence");
      for (const auto& el : sn["scatter"]) {
        const std::string port = el.as<std::string>();
        if (!step.find_input(port))
          fail_at(el, where + ": scatter names unknown input port '" + port +
                          "'");
        if (std::count(step.scatter.begin(), step.scatter.end(), port))
          fail_at(el, where + ": duplicate scatter port '" + port + "'");
        step.scatter.push_back(port);
      }
    }
    if (sn["scatter_method"]) {
      const std::string m = sn["scatter_method"].as<std::string>();
      if (m == "dot")
        step.scatter_method = ScatterMethod::dot;
      else if (m == "cross")
        step.scatter_method = ScatterMethod::cross;
      else
        fail_at(sn["scatter_method"],
                where + ": scatter_method must be 'dot' or 'cross'");
    }

    // Placeholder/port mismatch is a parse-time contract.
    for (const auto& name : command_placeholders(step.command)) {
      if (name == "outdir") continue;
      if (!step.find_input(name))
        fail_at(sn["command"], where + ": placeholder '{" + name +
                                   "}' names no input port");
    }
    w.steps.push_back(std::move(step));
  }

  if (root["outputs"]) {
    if (!root["outputs"].IsMap())
      fail_at(root["outputs"], "'outputs' must be a map");
    for (const auto& kv : root["outputs"]) {
      WorkflowOutput out;
      out.name = kv.first.as<std::string>();
      out.from = kv.second.as<std::string>();
      for (const auto& o : w.outputs)
        if (o.name == out.name)
          fail_at(kv.first, "duplicate workflow output '" + out.name + "'");
      w.outputs.push_back(std::move(out));
    }
  }

  // Dangling references are parse errors per the module contract.
  for (const auto& step : w.steps) {
    for (const auto& p : step.inputs) {
      std::string src_step, src_port;
      if (split_port_ref(p.from, &src_step, &src_port)) {
        const Step* src = w.find_step(src_step);
        if (!src || !src->find_output(src_port))
          throw ParseError("step '" + step.id + "." + p.name +
                           "': dangling reference '" + p.from + "'");
      } else {
        const auto dot = p.from.find('.');
        if (dot == std::string::npos || p.from.substr(0, dot) != "inputs")
          throw ParseError("step '" + step.id + "." + p.name +
                           "': malformed reference '" + p.from + "'");
        if (!w.find_input(p.from.substr(dot + 1)))
          throw ParseError("step '" + step.id + "." + p.name +
                           "': dangling reference '" + p.from + "'");
      }
    }
  }
  for (const auto& out : w.outputs) {
    std::string src_step, src_port;
    if (!split_port_ref(out.from, &src_step, &src_port) ||
        !w.find_step(src_step) ||
        !w.find_step(src_step)->find_output(src_port))
      throw ParseError("workflow output '" + out.name +
                       "': dangling reference '" + out.from + "'");
  }
  return w;
}

std::string serialize_workflow(const Workflow& w) {
  YAML::Emitter em;
  em << YAML::BeginMap;
  em << YAML::Key << "name" << YAML::Value << w.name;
  if (!w.inputs.empty()) {
    em << YAML::Key << "inputs" << YAML::Value << YAML::BeginMap;
    for (const auto& in : w.inputs) {
      em << YAML::Key << in.name << YAML::Value << YAML::BeginMap;
      em << YAML::Key << "type" << YAML::Value
         << (in.kind == PortKind::value ? "value" : "file");
      em << YAML::Key << "default" << YAML::Value
         << emit_default(in.default_value);
      em << YAML::EndMap;
    }
    em << YAML::EndMap;
  }
  em << YAML::Key << "steps" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : w.steps) {
    em << YAML::BeginMap;
    em << YAML::Key << "id" << YAML::Value << s.id;
    em << YAML::Key << "command" << YAML::Value << s.command;
    if (s.shell) em << YAML::Key << "shell" << YAML::Value << true;
    if (!s.inputs.empty()) {
      em << YAML::Key << "in" << YAML::Value << YAML::BeginMap;
      for (const auto& p : s.inputs) {
        em << YAML::Key << p.name << YAML::Value << YAML::BeginMap;
        em << YAML::Key << "from" << YAML::Value << p.from;
        em << YAML::Key << "type" << YAML::Value
           << (p.kind == PortKind::value ? "value" : "file");
        em << YAML::EndMap;
      }
      em << YAML::EndMap;
    }
    if (!s.outputs.empty()) {
      em << YAML::Key << "out" << YAML::Value << YAML::BeginMap;
      for (const auto& p : s.outputs) {
        em << YAML::Key << p.name << YAML::Value << YAML::BeginMap;
        em << YAML::Key << "type" << YAML::Value
           << (p.kind == PortKind::value ? "value" : "file");
        em << YAML::Key << "capture" << YAML::Value << p.capture;
        em << YAML::EndMap;
      }
      em << YAML::EndMap;
    }
    if (!s.scatter.empty()) {
      em << YAML::Key << "scatter" << YAML::Value << YAML::Flow << s.scatter;
      em << YAML::Key << "scatter_method" << YAML::Value
         << (s.scatter_method == ScatterMethod::dot ? "dot" : "cross");
    }
    em << YAML::EndMap;
  }
  em << YAML::EndSeq;
  if (!w.outputs.empty()) {
    em << YAML::Key << "outputs" << YAML::Value << YAML::BeginMap;
    for (const auto& o : w.outputs)
      em << YAML::Key << o.name << YAML::Value << o.from;
    em << YAML::EndMap;
  }
  em << YAML::EndMap;
  std::string out = em.c_str();
  out.push_back('\n');
  return out;
}

namespace {

// Finds one cycle and reports every step on it. Standard three-color DFS.
struct CycleFinder {
  const std::map<std::string, std::vector<std::string>>& succ;
  std::map<std::string, int> color;  // 0 white, 1 grey, 2 black
  std::vector<std::string> stack;
  std::vector<std::string> cycle;

  bool dfs(const std::string& n) {
    color[n] = 1;
    stack.push_back(n);
    for (const auto& m : succ.at(n)) {
      if (color[m] == 1) {
        auto it = std::find(stack.begin(), stack.end(), m);
        cycle.assign(it, stack.end());
        return true;
      }
      if (color[m] == 0 && dfs(m)) return true;
    }
    stack.pop_back();
    color[n] = 2;
    return false;
  }
};

}  // namespace

std::vector<Diagnostic> validate(const Workflow& w) {
  std::vector<Diagnostic> diags;
  auto add = [&](std::string code, std::string msg,
                 std::vector<std::string> steps = {}) {
    diags.push_back({std::move(code), std::move(msg), std::move(steps)});
  };

  std::set<std::string> ids;
  for (const auto& s : w.steps)
    if (!ids.insert(s.id).second)
      add("duplicate-id", "duplicate step id '" + s.id + "'", {s.id});

  std::set<std::string> input_names;
  for (const auto& in : w.inputs)
    if (!input_names.insert(in.name).second)
      add("duplicate-input", "duplicate workflow input '" + in.name + "'");

  for (const auto& s : w.steps) {
    // Input and output ports are separate namespaces: placeholders name
    // only inputs, captures only outputs.
    std::set<std::string> in_ports, out_ports;
    for (const auto& p : s.inputs)
      if (!in_ports.insert(p.name).second)
        add("duplicate-port",
            "step '" + s.id + "': duplicate input port '" + p.name + "'",
            {s.id});
    for (const auto& p : s.outputs) {
      if (!out_ports.insert(p.name).second)
        add("duplicate-port",
            "step '" + s.id + "': duplicate output port '" + p.name + "'",
            {s.id});
      if (p.kind == PortKind::file && has_upward_traversal(p.capture))
        add("bad-capture",
            "step '" + s.id + "." + p.name +
                "': capture path escapes the output directory",
            {s.id});
      if (p.kind == PortKind::value && p.capture != "stdout")
        add("bad-capture",
            "step '" + s.id + "." + p.name + "': value outputs capture stdout",
            {s.id});
    }
    for (const auto& p : s.inputs) {
      std::string src_step, src_port;
      if (split_port_ref(p.from, &src_step, &src_port)) {
        const Step* src = w.find_step(src_step);
        if (!src || !src->find_output(src_port))
          add("dangling-ref",
              "step '" + s.id + "." + p.name + "': dangling reference '" +
                  p.from + "'",
              {s.id});
      } else if (p.from.rfind("inputs.", 0) == 0) {
        if (!w.find_input(p.from.substr(7)))
          add("dangling-ref",
              "step '" + s.id + "." + p.name + "': dangling reference '" +
                  p.from + "'",
              {s.id});
      } else {
        add("dangling-ref",
            "step '" + s.id + "." + p.name + "': malformed reference '" +
                p.from + "'",
            {s.id});
      }
    }
    for (const auto& name : command_placeholders(s.command)) {
      if (name != "outdir" && !s.find_input(name))
        add("unknown-placeholder",
            "step '" + s.id + "': placeholder '{" + name +
                "}' names no input port",
            {s.id});
    }
    for (const auto& port : s.scatter)
      if (!s.find_input(port))
        add("unknown-scatter",
            "step '" + s.id + "': scatter names unknown port '" + port + "'",
            {s.id});
  }
  for (const auto& o : w.outputs) {
    std::string src_step, src_port;
    if (!split_port_ref(o.from, &src_step, &src_port) ||
        !w.find_step(src_step) ||
        !w.find_step(src_step)->find_output(src_port))
      add("dangling-ref",
          "workflow output '" + o.name + "': dangling reference '" + o.from +
              "'");
  }
  if (!diags.empty()) return diags;  // structure too broken for graph checks

  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& s : w.steps) succ[s.id];
  for (const auto& [from, to] : dependency_edges(w)) succ[from].push_back(to);

  CycleFinder finder{succ, {}, {}, {}};
  for (const auto& s : w.steps) {
    if (finder.color[s.id] == 0 && finder.dfs(s.id)) {
      std::string msg = "dependency cycle:";
      for (const auto& id : finder.cycle) msg += " " + id;
      add("cycle", msg, finder.cycle);
      return diags;
    }
  }

  // Scatter-nesting consistency needs an acyclic graph, so it runs last.
  for (auto& d : unfold_diagnostics(w)) diags.push_back(std::move(d));
  return diags;
}

std::vector<std::pair<std::string, std::string>> dependency_edges(
    const Workflow& w) {
  std::set<std::pair<std::string, std::string>> edges;
  for (const auto& s : w.steps) {
    for (const auto& p : s.inputs) {
      std::string src_step, src_port;
      if (split_port_ref(p.from, &src_step, &src_port) &&
          w.find_step(src_step))
        edges.insert({src_step, s.id});
    }
  }
  return {edges.begin(), edges.end()};
}

}  // namespace hflow
