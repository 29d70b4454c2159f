#include "sopmas/domain.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <regex>
#include <sstream>

#include "sopmas/text.hpp"

namespace sopmas {

namespace {

template <typename Enum, std::size_t N>
Enum enum_from(std::string_view text, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  throw Error(std::string("unknown ") + what + ": " + std::string(text));
}

constexpr std::array<std::string_view, 4> kTaskKinds = {"planning", "qa", "coding", "other"};
constexpr std::array<std::string_view, 5> kMessageKinds = {"task", "clarification", "feedback",
                                                           "watcher_guidance", "final_answer"};
constexpr std::array<std::string_view, 4> kTerminations = {"final_answer", "round_cap", "stalled",
                                                           "fatal_error"};

bool is_pseudo(std::string_view node) { return node == kUserNode || node == kEndNode; }

}  // namespace

std::string_view to_string(TaskKind kind) { return kTaskKinds[static_cast<std::size_t>(kind)]; }
TaskKind task_kind_from_string(std::string_view text) {
  return enum_from<TaskKind>(text, kTaskKinds, "task kind");
}

bool task_kind_requires_tools(TaskKind kind) {
  return kind == TaskKind::planning || kind == TaskKind::qa;
}

std::string_view to_string(MessageKind kind) { return kMessageKinds[static_cast<std::size_t>(kind)]; }
MessageKind message_kind_from_string(std::string_view text) {
  return enum_from<MessageKind>(text, kMessageKinds, "message kind");
}

std::string_view to_string(Termination t) { return kTerminations[static_cast<std::size_t>(t)]; }
Termination termination_from_string(std::string_view text) {
  return enum_from<Termination>(text, kTerminations, "termination");
}

std::string_view to_string(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::EmptyTeam: return "EmptyTeam";
    case DiagnosticKind::EmptyAgentName: return "EmptyAgentName";
    case DiagnosticKind::DuplicateAgent: return "DuplicateAgent";
    case DiagnosticKind::TeamMismatch: return "TeamMismatch";
    case DiagnosticKind::UnknownTool: return "UnknownTool";
    case DiagnosticKind::UnknownEndpoint: return "UnknownEndpoint";
    case DiagnosticKind::NoEntryEdge: return "NoEntryEdge";
    case DiagnosticKind::NoExitEdge: return "NoExitEdge";
    case DiagnosticKind::EdgeIntoUser: return "EdgeIntoUser";
    case DiagnosticKind::EdgeOutOfEnd: return "EdgeOutOfEnd";
    case DiagnosticKind::UnconditionedCycle: return "UnconditionedCycle";
  }
  return "?";
}

bool CommunicationStructure::has_node(std::string_view node) const {
  if (is_pseudo(node)) return true;
  return std::any_of(edges.begin(), edges.end(),
                     [&](const Edge& e) { return e.from == node || e.to == node; });
}

const AgentSpec* Sop::find_agent(std::string_view name) const {
  auto it = std::find_if(agents.begin(), agents.end(), [&](const AgentSpec& a) { return a.name == name; });
  return it == agents.end() ? nullptr : &*it;
}

AgentSpec* Sop::find_agent(std::string_view name) {
  auto it = std::find_if(agents.begin(), agents.end(), [&](const AgentSpec& a) { return a.name == name; });
  return it == agents.end() ? nullptr : &*it;
}

namespace {

// Tarjan's SCC over the unconditioned edges; returns components that contain a cycle.
std::vector<std::vector<std::string>> unconditioned_cycles(const Sop& sop) {
  std::map<std::string, std::vector<std::string>> adjacency;
  std::set<std::string> self_loops;
  std::vector<std::string> nodes;
  auto add_node = [&](const std::string& n) {
    if (adjacency.emplace(n, std::vector<std::string>{}).second) nodes.push_back(n);
  };
  for (const auto& e : sop.structure.edges) {
    if (e.condition) continue;
    add_node(e.from);
    add_node(e.to);
    adjacency[e.from].push_back(e.to);
    if (e.from == e.to) self_loops.insert(e.from);
  }

  std::map<std::string, int> index, low;
  std::set<std::string> on_stack;
  std::vector<std::string> stack;
  std::vector<std::vector<std::string>> cycles;
  int counter = 0;

  std::function<void(const std::string&)> connect = [&](const std::string& v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (const auto& w : adjacency[v]) {
      if (!index.contains(w)) {
        connect(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.contains(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> component;
      std::string w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        component.push_back(w);
      } while (w != v);
      if (component.size() > 1 || self_loops.contains(v)) cycles.push_back(std::move(component));
    }
  };
  for (const auto& n : nodes) {
    if (!index.contains(n)) connect(n);
  }

  auto rank = [&](const std::string& n) {
    auto it = std::find(sop.team.begin(), sop.team.end(), n);
    return std::distance(sop.team.begin(), it);
  };
  for (auto& c : cycles) {
    std::stable_sort(c.begin(), c.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  }
  std::sort(cycles.begin(), cycles.end(),
            [&](const auto& a, const auto& b) { return rank(a.front()) < rank(b.front()); });
  return cycles;
}

}  // namespace

std::vector<Diagnostic> validate_sop(const Sop& sop, const std::set<std::string>& registry_tools) {
  std::vector<Diagnostic> out;
  auto emit = [&](DiagnosticKind kind, std::string element, std::string message,
                  std::vector<std::string> nodes = {}) {
    out.push_back(Diagnostic{kind, std::move(element), std::move(nodes), std::move(message)});
  };

  if (sop.team.empty()) emit(DiagnosticKind::EmptyTeam, "", "team list is empty");

  std::set<std::string> agent_names;
  for (const auto& a : sop.agents) {
    if (a.name.empty()) {
      emit(DiagnosticKind::EmptyAgentName, "", "agent with empty name");
      continue;
    }
    if (!agent_names.insert(a.name).second) {
      emit(DiagnosticKind::DuplicateAgent, a.name, "agent '" + a.name + "' defined more than once");
    }
  }

  std::set<std::string> team_names;
  for (const auto& n : sop.team) {
    if (!team_names.insert(n).second) {
      emit(DiagnosticKind::DuplicateAgent, n, "team lists '" + n + "' more than once");
    }
    if (is_pseudo(n) || n == kWatcherNode) {
      emit(DiagnosticKind::TeamMismatch, n, "'" + n + "' is a reserved node name");
    }
  }
  for (const auto& n : sop.team) {
    if (!agent_names.contains(n)) {
      emit(DiagnosticKind::TeamMismatch, n, "team member '" + n + "' has no agent specification");
    }
  }
  for (const auto& a : sop.agents) {
    if (!a.name.empty() && !team_names.contains(a.name)) {
      emit(DiagnosticKind::TeamMismatch, a.name, "agent '" + a.name + "' is not listed in the team");
    }
  }
  if (team_names == agent_names && sop.team.size() == sop.agents.size()) {
    for (std::size_t i = 0; i < sop.team.size(); ++i) {
      if (sop.team[i] != sop.agents[i].name) {
        emit(DiagnosticKind::TeamMismatch, sop.team[i], "team order differs from agent specification order");
        break;
      }
    }
  }

  std::set<std::string> reported_tools;
  for (const auto& a : sop.agents) {
    for (const auto& t : a.tools) {
      if (!registry_tools.contains(t) && reported_tools.insert(t).second) {
        emit(DiagnosticKind::UnknownTool, t, "tool '" + t + "' (agent '" + a.name + "') is not registered");
      }
    }
  }

  bool has_entry = false, has_exit = false;
  for (const auto& e : sop.structure.edges) {
    for (const auto* endpoint : {&e.from, &e.to}) {
      if (!is_pseudo(*endpoint) && !team_names.contains(*endpoint)) {
        emit(DiagnosticKind::UnknownEndpoint, *endpoint, "edge '" + render_edge(e) + "' names unknown node '" +
                                                             *endpoint + "'");
      }
    }
    if (e.to == kUserNode) emit(DiagnosticKind::EdgeIntoUser, render_edge(e), "User cannot receive edges");
    if (e.from == kEndNode) emit(DiagnosticKind::EdgeOutOfEnd, render_edge(e), "End cannot emit edges");
    has_entry = has_entry || e.from == kUserNode;
    has_exit = has_exit || e.to == kEndNode;
  }
  if (!has_entry) emit(DiagnosticKind::NoEntryEdge, std::string(kUserNode), "no edge leaves User");
  if (!has_exit) emit(DiagnosticKind::NoExitEdge, std::string(kEndNode), "no edge reaches End");

  for (auto& cycle : unconditioned_cycles(sop)) {
    std::string joined;
    for (const auto& n : cycle) joined += (joined.empty() ? "" : " -> ") + n;
    std::string head = cycle.front();
    emit(DiagnosticKind::UnconditionedCycle, head, "cycle without condition labels: " + joined, std::move(cycle));
  }
  return out;
}

std::string format_diagnostics(const std::vector<Diagnostic>& diagnostics) {
  std::ostringstream os;
  for (const auto& d : diagnostics) {
    os << "- " << to_string(d.kind) << "(" << d.element << "): " << d.message << "\n";
  }
  return os.str();
}

std::vector<std::string> successors(const CommunicationStructure& structure, std::string_view node,
                                    const std::optional<std::string>& outcome) {
  if (!structure.has_node(node)) throw UnknownNodeError(std::string(node));
  std::vector<std::string> out;
  for (const auto& e : structure.edges) {
    if (e.from != node) continue;
    if (e.condition && (!outcome || *outcome != *e.condition)) continue;
    if (std::find(out.begin(), out.end(), e.to) == out.end()) out.push_back(e.to);
  }
  return out;
}

namespace {

struct Target {
  std::string node;
  std::optional<std::string> condition;
};

Target parse_target(std::string_view raw) {
  static const std::regex conditioned(R"(^(.*?)\s*\(\s*(?:if\s+)?([^)]*?)\s*\)$)", std::regex::icase);
  std::string text = trim(raw);
  std::smatch m;
  if (std::regex_match(text, m, conditioned)) return {trim(m[1].str()), m[2].str()};
  return {text, std::nullopt};
}

}  // namespace

CommunicationStructure parse_structure_text(std::string_view text) {
  CommunicationStructure out;
  std::string_view edges_part = text;
  for (std::string_view marker : {"**Description:**", "Description:"}) {
    if (auto pos = text.find(marker); pos != std::string_view::npos) {
      edges_part = text.substr(0, pos);
      out.description = trim(text.substr(pos + marker.size()));
      break;
    }
  }

  static const std::regex numbering(R"(^\s*\d+[.)]\s*)");
  std::string normalized(edges_part);
  std::replace(normalized.begin(), normalized.end(), '\n', ';');
  for (const auto& clause_raw : split(normalized, ';')) {
    std::string clause = std::regex_replace(trim(clause_raw), numbering, "");
    while (!clause.empty() && (clause.back() == '.' || std::isspace(static_cast<unsigned char>(clause.back())))) {
      clause.pop_back();
    }
    if (clause.find("->") == std::string::npos) continue;
    auto parts = split(clause, "->");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      for (const auto& source : split(parts[i], '|')) {
        std::string from = parse_target(source).node;
        for (const auto& target : split(parts[i + 1], '|')) {
          auto t = parse_target(target);
          if (from.empty() || t.node.empty()) continue;
          out.edges.push_back(Edge{from, t.node, t.condition});
        }
      }
    }
  }
  return out;
}

std::string render_edge(const Edge& edge) {
  std::string s = edge.from + " -> " + edge.to;
  if (edge.condition) s += " (if " + *edge.condition + ")";
  return s;
}

OperatingProcedure bind_sop(const Sop& sop, const Query& query, std::vector<std::string> provenance) {
  return OperatingProcedure{sop, query, std::move(provenance)};
}

}  // namespace sopmas
