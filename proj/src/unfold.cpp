#include "hflow/unfold.hpp"

#include <algorithm>
#include <set>

namespace hflow {

std::string to_string(EdgeClass c) {
  switch (c) {
    case EdgeClass::scatter_split: return "split";
    case EdgeClass::element_wise: return "element-wise";
    case EdgeClass::broadcast: return "broadcast";
    case EdgeClass::gather: return "gather";
  }
  return "?";
}

std::vector<ScatterPiece> scatter_expand(const Tag& prefix,
                                         const Payload& list) {
  std::vector<ScatterPiece> out;
  out.reserve(list.items.size());
  for (uint32_t i = 0; i < list.items.size(); ++i) {
    Tag t = prefix;
    t.push_back(i);
    out.push_back({std::move(t), list.items[i]});
  }
  return out;
}

namespace {

struct Source {
  bool is_input = false;
  std::string step;  // producer step id when !is_input
  uint32_t depth = 0;
  const std::vector<std::string>* anchors = nullptr;  // empty for inputs
};

Source resolve_source(const std::map<std::string, StepPlan>& plans,
                      const std::string& from) {
  static const std::vector<std::string> kNoAnchors;
  std::string step, port;
  if (!split_port_ref(from, &step, &port))
    return {true, "", 0, &kNoAnchors};
  const auto& plan = plans.at(step);
  return {false, step, plan.depth, &plan.level_anchors};
}

std::vector<std::string> topo_sort(const Workflow& w,
                                   std::vector<Diagnostic>* diags) {
  std::map<std::string, std::set<std::string>> preds;
  std::map<std::string, std::vector<std::string>> succs;
  for (const auto& s : w.steps) preds[s.id];
  for (const auto& [from, to] : dependency_edges(w)) {
    preds[to].insert(from);
    succs[from].push_back(to);
  }
  std::set<std::string> ready;
  for (const auto& [id, p] : preds)
    if (p.empty()) ready.insert(id);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::string id = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(id);
    for (const auto& next : succs[id]) {
      preds[next].erase(id);
      if (preds[next].empty()) ready.insert(next);
    }
  }
  if (order.size() != w.steps.size() && diags)
    diags->push_back({"cycle", "dependency cycle prevents unfolding", {}});
  return order;
}

WorkflowPlan build_plan(const Workflow& w, std::vector<Diagnostic>* diags) {
  WorkflowPlan plan;
  plan.topo_order = topo_sort(w, diags);
  if (plan.topo_order.size() != w.steps.size()) return plan;

  auto bad = [&](const std::string& step, const std::string& msg) {
    if (diags) diags->push_back({"scatter-nesting", msg, {step}});
  };

  for (const auto& id : plan.topo_order) {
    const Step& step = *w.find_step(id);
    StepPlan sp;
    sp.step = id;
    sp.method = step.scatter_method;

    // Scattered ports: the source's depth decides ride vs split.
    for (const auto& name : step.scatter) {
      const InPort* port = step.find_input(name);
      if (!port) continue;  // validate() reports this
      const Source src = resolve_source(plan.steps, port->from);
      if (src.depth >= 1)
        sp.ride_ports.push_back(name);
      else
        sp.split_ports.push_back(name);
    }

    for (const auto& name : sp.ride_ports) {
      const Source src =
          resolve_source(plan.steps, step.find_input(name)->from);
      if (sp.base_depth == 0) {
        sp.base_depth = src.depth;
        sp.level_anchors = *src.anchors;
      } else if (src.depth != sp.base_depth ||
                 *src.anchors != sp.level_anchors) {
        bad(id, "step '" + id + "': scattered inputs ride inconsistently "
                "nested sources (port '" + name + "')");
      }
    }

    sp.depth = sp.base_depth + (sp.split_ports.empty() ? 0 : 1);
    if (!sp.split_ports.empty()) sp.level_anchors.push_back(id);

    // Dot-joined splits over workflow-input defaults have statically
    // known lengths; unequal ones can be rejected up front.
    if (sp.method == ScatterMethod::dot && sp.split_ports.size() > 1) {
      int64_t len = -1;
      for (const auto& name : sp.split_ports) {
        const std::string& from = step.find_input(name)->from;
        const WorkflowInput* in =
            from.rfind("inputs.", 0) == 0 ? w.find_input(from.substr(7))
                                          : nullptr;
        if (!in || in->default_value.kind != Payload::Kind::list) break;
        const auto n = static_cast<int64_t>(in->default_value.items.size());
        if (len >= 0 && n != len) {
          bad(id, "step '" + id + "': dot scatter joins lists of unequal "
                  "length");
          break;
        }
        len = n;
      }
    }

    for (const auto& port : step.inputs) {
      const Source src = resolve_source(plan.steps, port.from);
      PortPlan pp;
      pp.source_depth = src.depth;
      const bool scattered =
          std::count(step.scatter.begin(), step.scatter.end(), port.name) > 0;
      if (scattered) {
        pp.cls = src.depth >= 1 ? EdgeClass::element_wise
                                : EdgeClass::scatter_split;
        sp.ports[port.name] = pp;
        continue;
      }
      uint32_t t = 0;
      const uint32_t limit =
          std::min<uint32_t>(src.depth, sp.base_depth);
      while (t < limit && (*src.anchors)[t] == sp.level_anchors[t]) ++t;
      pp.gather_levels = src.depth - t;
      if (pp.gather_levels > 0)
        pp.cls = EdgeClass::gather;
      else if (src.depth < sp.depth)
        pp.cls = EdgeClass::broadcast;
      else
        pp.cls = EdgeClass::element_wise;
      sp.ports[port.name] = pp;
    }
    plan.steps[id] = std::move(sp);
  }
  return plan;
}

}  // namespace

WorkflowPlan unfold_plan(const Workflow& w) {
  std::vector<Diagnostic> diags;
  WorkflowPlan plan = build_plan(w, &diags);
  if (!diags.empty()) throw Error(diags.front().message);
  return plan;
}

std::vector<Diagnostic> unfold_diagnostics(const Workflow& w) {
  std::vector<Diagnostic> diags;
  build_plan(w, &diags);
  return diags;
}

}  // namespace hflow
