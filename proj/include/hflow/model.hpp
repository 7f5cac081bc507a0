#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hflow/common.hpp"

namespace hflow {

enum class PortKind { value, file };

enum class ScatterMethod { dot, cross };

struct InPort {
  std::string name;
  PortKind kind = PortKind::value;
  std::string from;  // "stepId.portName" or "inputs.name"

  bool operator==(const InPort&) const = default;
};

struct OutPort {
  std::string name;
  PortKind kind = PortKind::value;
  // "stdout" for value captures, otherwise a relative path under the
  // instance's output directory with no upward traversal.
  std::string capture = "stdout";

  bool operator==(const OutPort&) const = default;
};

struct Step {
  std::string id;
  std::string command;  // argv template; {port} placeholders plus {outdir}
  bool shell = false;
  std::vector<InPort> inputs;
  std::vector<OutPort> outputs;
  std::vector<std::string> scatter;
  ScatterMethod scatter_method = ScatterMethod::dot;

  const InPort* find_input(const std::string& name) const;
  const OutPort* find_output(const std::string& name) const;

  bool operator==(const Step&) const = default;
};

struct WorkflowInput {
  std::string name;
  PortKind kind = PortKind::value;
  // Scalar defaults become value payloads; sequence defaults become lists.
  // For file-kind inputs the leaf text is a path imported at run start.
  Payload default_value;

  bool operator==(const WorkflowInput&) const = default;
};

struct WorkflowOutput {
  std::string name;
  std::string from;  // "stepId.portName"

  bool operator==(const WorkflowOutput&) const = default;
};

struct Workflow {
  std::string name;
  std::vector<WorkflowInput> inputs;
  std::vector<Step> steps;
  std::vector<WorkflowOutput> outputs;

  const Step* find_step(const std::string& id) const;
  const WorkflowInput* find_input(const std::string& name) const;

  bool operator==(const Workflow&) const = default;
};

struct Diagnostic {
  std::string code;     // stable identifier, e.g. "cycle", "unbound-step"
  std::string message;  // human-readable, names the offending entities
  std::vector<std::string> steps;
};

/// Parses a workflow file. The schema is closed: unknown keys are errors.
/// Throws ParseError for syntax errors (position-annotated), duplicate ids,
/// dangling `from` references and placeholder/port mismatches.
Workflow parse_workflow(const std::string& text);

/// Canonical YAML emission; parse(serialize(parse(t))) == parse(t).
std::string serialize_workflow(const Workflow& w);

/// Structural validation. Empty result iff every workflow invariant holds;
/// never throws. Cycle diagnostics name every step on one offending cycle.
std::vector<Diagnostic> validate(const Workflow& w);

/// Deduplicated step dependency edges (producer, consumer), sorted.
std::vector<std::pair<std::string, std::string>> dependency_edges(
    const Workflow& w);

/// Reference "stepId.portName" split helper; returns false for input refs.
bool split_port_ref(const std::string& ref, std::string* step,
                    std::string* port);

/// Placeholder names appearing in a command template, in order of first use.
std::vector<std::string> command_placeholders(const std::string& command);

}  // namespace hflow
