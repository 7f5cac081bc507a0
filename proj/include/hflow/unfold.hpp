// Static analysis of scatter nesting: how many tag levels each step runs
// at, and how every input edge is classified (split, element-wise,
// broadcast, or gather). The runtime consumes this plan verbatim, so its
// rules are the single definition of the dataflow semantics.
//
// A port listed in `scatter` is a SPLIT when its source carries depth-0
// data (one list expands into one new tag level) and a RIDE when the
// source is already scattered (the consumer joins the producer's
// iteration element-by-element). All rides of a step must agree on depth
// and on the identity of the splits that created each level; otherwise
// the workflow is rejected as inconsistently nested.
//
// A port not listed in `scatter` aligns with the consumer on the longest
// shared level prefix. Levels the source has beyond that prefix are
// gathered back into (nested) lists; levels the consumer has beyond the
// source's depth make the edge a broadcast.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hflow/model.hpp"

namespace hflow {

enum class EdgeClass : uint8_t {
  scatter_split,  // depth-0 list expanded into a new tag level here
  element_wise,   // one element per instance, same iteration space
  broadcast,      // whole upstream result replicated to every instance
  gather,         // deeper upstream levels collected into lists
};

std::string to_string(EdgeClass c);

struct PortPlan {
  EdgeClass cls = EdgeClass::element_wise;
  uint32_t source_depth = 0;
  uint32_t gather_levels = 0;  // > 0 only for EdgeClass::gather
  bool operator==(const PortPlan&) const = default;
};

struct StepPlan {
  std::string step;
  uint32_t base_depth = 0;  // levels inherited through ride ports
  uint32_t depth = 0;       // base_depth + 1 if this step splits
  ScatterMethod method = ScatterMethod::dot;
  std::vector<std::string> ride_ports;   // scatter order preserved
  std::vector<std::string> split_ports;  // scatter order preserved
  std::map<std::string, PortPlan> ports;
  // level_anchors[l] identifies the step whose split created tag level
  // l+1. Used to decide which deeper levels a plain edge can align with.
  std::vector<std::string> level_anchors;
  bool operator==(const StepPlan&) const = default;
};

struct WorkflowPlan {
  std::map<std::string, StepPlan> steps;
  std::vector<std::string> topo_order;
};

// Throws Error when the workflow's scatter nesting is inconsistent.
// Requires an acyclic workflow (validate() first).
WorkflowPlan unfold_plan(const Workflow& w);

// Same checks as unfold_plan but collected as diagnostics; empty when the
// plan is well formed.
std::vector<Diagnostic> unfold_diagnostics(const Workflow& w);

// The single list-expansion primitive the runtime applies per split
// level: element i of `payload` goes to tag `prefix + [i]`. Exposed so
// tests can compose it by hand against engine-produced tags.
struct ScatterPiece {
  Tag tag;
  Payload payload;
};
std::vector<ScatterPiece> scatter_expand(const Tag& prefix,
                                         const Payload& list);

}  // namespace hflow
