#pragma once

// Key-level semantic graph for one question-choice pair, plus the path
// analytics that run on it:
//
//  - split_question_choice_nodes: question keys = intersection of the
//    per-choice hypothesis key sets; choice keys = the per-choice remainder.
//  - build_amr_sg: start from the hypothesis's key-level graph (question-to-
//    choice edges removed), then merge every pool fact that shares a key with
//    the current node set, to a fixpoint. Edges carry the id of the graph
//    they came from.
//  - find_evidence_paths: all simple question->choice paths over fact edges
//    only, up to a node-count cap.
//  - select_active_facts: rank path-bearing facts, truncate to a cap.
//  - build_fact_connection_graph: (n+1)x(n+1) 0/1 matrix over the hypothesis
//    and the active facts, connected when key sets intersect.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amrsg/common.hpp"
#include "amrsg/penman.hpp"

namespace amrsg::semgraph {

using penman::AmrBank;
using penman::AmrGraph;
using penman::ConceptKey;

struct EmptyHypothesis : InputError {
  using InputError::InputError;
};

// Origin tag for edges contributed by the hypothesis itself. Fact ids must
// not collide with it; build_amr_sg rejects pools that do.
inline const std::string kHypothesisOrigin = "<hypothesis>";

// Undirected key-level edge. Endpoints are stored sorted so that (a, b) and
// (b, a) are the same edge; parallel edges with different origins are kept
// distinct.
struct SgEdge {
  ConceptKey a;
  ConceptKey b;
  std::string origin;

  SgEdge(ConceptKey x, ConceptKey y, std::string from)
      : a(std::move(x)), b(std::move(y)), origin(std::move(from)) {
    if (b < a) std::swap(a, b);
  }

  auto operator<=>(const SgEdge&) const = default;
};

struct AmrSg {
  std::set<ConceptKey> nodes;
  std::set<SgEdge> edges;
  std::set<ConceptKey> question_nodes;
  std::set<ConceptKey> choice_nodes;
  std::set<std::string> merged_fact_ids;
};

// A simple path from a question node to a choice node. edge_origins[i] is
// the origin of the edge between node_sequence[i] and node_sequence[i+1];
// none of them is kHypothesisOrigin.
struct EvidencePath {
  std::vector<ConceptKey> node_sequence;
  std::vector<std::string> edge_origins;

  auto operator<=>(const EvidencePath&) const = default;
};

// Row/column 0 is the hypothesis; row/column i >= 1 is the i-th active fact.
struct FactConnectionGraph {
  std::vector<std::string> node_labels;
  std::vector<std::vector<int>> adjacency;  // symmetric 0/1, unit diagonal
};

// Per-variable key assignment for one graph.
using VariableKeys = std::unordered_map<std::string, ConceptKey>;
using KeysFn = std::function<VariableKeys(const AmrGraph&)>;

inline KeysFn default_keys_fn() {
  return [](const AmrGraph& g) { return penman::concept_keys(g); };
}

inline std::set<ConceptKey> key_set(const VariableKeys& keys) {
  std::set<ConceptKey> out;
  for (const auto& [var, key] : keys) out.insert(key);
  return out;
}

inline std::pair<std::set<ConceptKey>, std::vector<std::set<ConceptKey>>>
split_question_choice_nodes(const std::vector<std::set<ConceptKey>>& keysets) {
  if (keysets.empty()) throw EmptyHypothesis("no hypothesis key sets given");
  for (std::size_t j = 0; j < keysets.size(); ++j)
    if (keysets[j].empty())
      throw EmptyHypothesis("hypothesis " + std::to_string(j) +
                            " has no concept keys");
  std::set<ConceptKey> shared = keysets[0];
  for (std::size_t j = 1; j < keysets.size(); ++j) {
    std::set<ConceptKey> next;
    std::set_intersection(shared.begin(), shared.end(), keysets[j].begin(),
                          keysets[j].end(), std::inserter(next, next.begin()));
    shared = std::move(next);
  }
  std::vector<std::set<ConceptKey>> remainders;
  remainders.reserve(keysets.size());
  for (const auto& keyset : keysets) {
    std::set<ConceptKey> rest;
    std::set_difference(keyset.begin(), keyset.end(), shared.begin(),
                        shared.end(), std::inserter(rest, rest.begin()));
    remainders.push_back(std::move(rest));
  }
  return {std::move(shared), std::move(remainders)};
}

namespace detail {

// Distinct undirected key pairs realized by a graph's edges. Variables that
// map to the same key collapse, so self-pairs are dropped here.
inline std::set<std::pair<ConceptKey, ConceptKey>> key_level_edges(
    const AmrGraph& g, const VariableKeys& keys) {
  std::set<std::pair<ConceptKey, ConceptKey>> out;
  for (const auto& edge : g.edges) {
    ConceptKey a = keys.at(edge.source);
    ConceptKey b = keys.at(edge.target);
    if (a == b) continue;
    if (b < a) std::swap(a, b);
    out.emplace(std::move(a), std::move(b));
  }
  return out;
}

inline bool intersects(const std::set<ConceptKey>& a,
                       const std::set<ConceptKey>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib)
      ++ia;
    else if (*ib < *ia)
      ++ib;
    else
      return true;
  }
  return false;
}

}  // namespace detail

inline AmrSg build_amr_sg(const AmrGraph& hypothesis, const AmrBank& pool,
                          const KeysFn& keys_fn,
                          const std::set<ConceptKey>& question_keys,
                          const std::set<ConceptKey>& choice_keys) {
  if (detail::intersects(question_keys, choice_keys))
    throw InternalError("question and choice key sets overlap");

  AmrSg sg;
  sg.question_nodes = question_keys;
  sg.choice_nodes = choice_keys;

  VariableKeys hyp_keys = keys_fn(hypothesis);
  for (const auto& [var, key] : hyp_keys) sg.nodes.insert(key);
  for (const auto& [a, b] : detail::key_level_edges(hypothesis, hyp_keys)) {
    bool crosses = (question_keys.count(a) && choice_keys.count(b)) ||
                   (question_keys.count(b) && choice_keys.count(a));
    if (!crosses) sg.edges.insert(SgEdge(a, b, kHypothesisOrigin));
  }

  struct Fact {
    const std::string* id;
    std::set<ConceptKey> keys;
    std::set<std::pair<ConceptKey, ConceptKey>> edges;
    bool merged = false;
  };
  std::vector<Fact> facts;
  facts.reserve(pool.size());
  for (const auto& [id, graph] : pool.entries) {
    if (id == kHypothesisOrigin)
      throw InternalError("fact id collides with the hypothesis origin tag");
    VariableKeys keys = keys_fn(graph);
    facts.push_back(
        {&id, key_set(keys), detail::key_level_edges(graph, keys)});
  }

  bool grew = true;
  while (grew) {
    grew = false;
    for (Fact& fact : facts) {
      if (fact.merged || !detail::intersects(fact.keys, sg.nodes)) continue;
      sg.nodes.insert(fact.keys.begin(), fact.keys.end());
      for (const auto& [a, b] : fact.edges)
        sg.edges.insert(SgEdge(a, b, *fact.id));
      sg.merged_fact_ids.insert(*fact.id);
      fact.merged = true;
      grew = true;
    }
  }
  return sg;
}

// Every simple path of at most max_path_nodes nodes that starts at a
// question node, ends at a choice node, and uses fact edges only. The search
// is depth-first with neighbors ordered by (key, origin), so the output
// order is deterministic; intermediate nodes are unrestricted, and a path
// keeps extending past a choice node when the cap allows.
inline std::vector<EvidencePath> find_evidence_paths(
    const AmrSg& sg, std::size_t max_path_nodes) {
  std::vector<EvidencePath> out;
  if (max_path_nodes < 2) return out;

  std::map<ConceptKey, std::vector<std::pair<ConceptKey, std::string>>> adj;
  for (const SgEdge& edge : sg.edges) {
    if (edge.origin == kHypothesisOrigin) continue;
    adj[edge.a].emplace_back(edge.b, edge.origin);
    adj[edge.b].emplace_back(edge.a, edge.origin);
  }
  for (auto& [node, steps] : adj) std::sort(steps.begin(), steps.end());

  std::vector<ConceptKey> seq;
  std::vector<std::string> origins;
  std::set<ConceptKey> visited;
  auto dfs = [&](auto&& self, const ConceptKey& node) -> void {
    if (seq.size() >= 2 && sg.choice_nodes.count(node))
      out.push_back({seq, origins});
    if (seq.size() == max_path_nodes) return;
    auto it = adj.find(node);
    if (it == adj.end()) return;
    for (const auto& [next, origin] : it->second) {
      if (visited.count(next)) continue;
      seq.push_back(next);
      origins.push_back(origin);
      visited.insert(next);
      self(self, next);
      visited.erase(next);
      origins.pop_back();
      seq.pop_back();
    }
  };
  for (const ConceptKey& start : sg.question_nodes) {
    seq.assign(1, start);
    origins.clear();
    visited = {start};
    dfs(dfs, start);
  }
  return out;
}

// How many distinct paths each fact appears on (a fact used twice by one
// path counts that path once).
inline std::map<std::string, std::size_t> fact_path_counts(
    const std::vector<EvidencePath>& paths) {
  std::map<std::string, std::size_t> counts;
  for (const EvidencePath& path : paths) {
    std::set<std::string> on_this(path.edge_origins.begin(),
                                  path.edge_origins.end());
    on_this.erase(kHypothesisOrigin);
    for (const std::string& id : on_this) ++counts[id];
  }
  return counts;
}

// Facts are ranked by how many distinct paths they appear on, then by
// retrieval score, then by id; the top `cap` survive. Facts absent from the
// score map rank as score 0.
inline std::vector<std::string> select_active_facts(
    const std::vector<EvidencePath>& paths,
    const std::map<std::string, double>& retrieval_scores, std::size_t cap) {
  std::map<std::string, std::size_t> path_count = fact_path_counts(paths);
  std::vector<std::string> facts;
  facts.reserve(path_count.size());
  for (const auto& [id, count] : path_count) facts.push_back(id);

  auto score_of = [&](const std::string& id) {
    auto it = retrieval_scores.find(id);
    return it == retrieval_scores.end() ? 0.0 : it->second;
  };
  std::sort(facts.begin(), facts.end(),
            [&](const std::string& x, const std::string& y) {
              std::size_t cx = path_count.at(x), cy = path_count.at(y);
              if (cx != cy) return cx > cy;
              double sx = score_of(x), sy = score_of(y);
              if (sx != sy) return sx > sy;
              return x < y;
            });
  if (facts.size() > cap) facts.resize(cap);
  return facts;
}

inline FactConnectionGraph build_fact_connection_graph(
    const AmrSg& sg, const std::set<ConceptKey>& hypothesis_keys,
    const std::vector<std::string>& active,
    const std::map<std::string, std::set<ConceptKey>>& fact_keysets) {
  std::vector<const std::set<ConceptKey>*> keysets;
  keysets.push_back(&hypothesis_keys);
  for (const std::string& id : active) {
    if (!sg.merged_fact_ids.count(id))
      throw InternalError("active fact " + id + " was never merged");
    auto it = fact_keysets.find(id);
    if (it == fact_keysets.end())
      throw InternalError("no key set for active fact " + id);
    keysets.push_back(&it->second);
  }

  FactConnectionGraph graph;
  graph.node_labels.push_back(kHypothesisOrigin);
  graph.node_labels.insert(graph.node_labels.end(), active.begin(),
                           active.end());
  std::size_t n = keysets.size();
  graph.adjacency.assign(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    graph.adjacency[i][i] = 1;
    for (std::size_t j = i + 1; j < n; ++j) {
      int connected = detail::intersects(*keysets[i], *keysets[j]) ? 1 : 0;
      graph.adjacency[i][j] = connected;
      graph.adjacency[j][i] = connected;
    }
  }
  return graph;
}

}  // namespace amrsg::semgraph
