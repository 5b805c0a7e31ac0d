// End-to-end question answering over a fact corpus:
//   hypothesis generation -> two-section BM25 pooling -> semantic-graph
//   construction -> evidence-path extraction -> active-fact selection ->
//   gated graph scoring.
// Also the file formats the command-line tool reads (fact corpora, JSONL
// question sets, AMR banks, key=value configs) and the reports it writes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amrsg/common.hpp"
#include "amrsg/penman.hpp"
#include "amrsg/reasoner.hpp"
#include "amrsg/retrieval.hpp"
#include "amrsg/semgraph.hpp"
#include "json.hpp"

namespace amrsg::pipeline {

using ordered_json = nlohmann::ordered_json;
using penman::AmrGraph;
using penman::ConceptKey;

struct ConfigError : InputError {
  using InputError::InputError;
};

// A required AMR (hypothesis or pooled fact) is absent from the bank.
struct MissingAmr : InputError {
  using InputError::InputError;
};

struct UnknownQuestion : InputError {
  using InputError::InputError;
};

struct ChoiceOutOfRange : InputError {
  using InputError::InputError;
};

struct EmptyDataset : InputError {
  using InputError::InputError;
};

// Evaluation needs every question labelled with answer_idx.
struct MissingLabel : InputError {
  using InputError::InputError;
};

struct PipelineConfig {
  std::string core_corpus;    // curated fact file (first pool section)
  std::string common_corpus;  // open fact file (second pool section)
  std::string amr_bank;       // AMRs for hypotheses and facts
  std::string questions;      // JSONL question set

  std::size_t pool_size = 100;
  std::size_t n_core = 10;
  std::size_t n_common = 90;
  std::size_t active_cap = 15;
  std::size_t max_path_nodes = 8;

  std::size_t layers = 2;
  std::size_t heads = 16;
  std::size_t dim = 64;
  std::uint64_t seed = 1;

  // Retrieve with the raw question text instead of the per-choice hypothesis.
  bool query_from_question = false;

  void validate() const {
    if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
    if (n_core + n_common != pool_size)
      throw ConfigError("n_core + n_common must equal pool_size (" +
                        std::to_string(n_core) + " + " +
                        std::to_string(n_common) +
                        " != " + std::to_string(pool_size) + ")");
    if (active_cap < 1) throw ConfigError("active_cap must be >= 1");
    if (max_path_nodes < 2) throw ConfigError("max_path_nodes must be >= 2");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (heads < 1 || dim < 1 || dim % heads != 0)
      throw ConfigError("dim must be a positive multiple of heads");
  }
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Lines without their terminators; a trailing newline adds no final line.
inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (line.ends_with('\r')) line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

inline bool blank(std::string_view s) {
  return s.find_first_not_of(" \t") == std::string_view::npos;
}

}  // namespace detail

// Fact file: UTF-8, one fact per line. If the first non-blank line holds a
// tab the whole file is read as `id<TAB>text`; otherwise each line is the
// fact text and its id is `<path>:<line>` (1-based). Blank lines are skipped
// but still counted.
inline std::vector<std::pair<std::string, std::string>> load_corpus(
    const std::string& path) {
  std::vector<std::string> lines = detail::split_lines(detail::read_file(path));
  std::optional<bool> tsv;
  std::vector<std::pair<std::string, std::string>> corpus;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (detail::blank(line)) continue;
    std::string where = path + ":" + std::to_string(i + 1);
    if (!tsv) tsv = line.find('\t') != std::string::npos;
    std::string id, text;
    if (*tsv) {
      std::size_t at = line.find('\t');
      if (at == std::string::npos)
        throw InputError(where + ": expected id<TAB>text");
      id = line.substr(0, at);
      text = line.substr(at + 1);
    } else {
      id = where;
      text = line;
    }
    if (id.empty() || detail::blank(text))
      throw InputError(where + ": empty fact id or text");
    if (id == semgraph::kHypothesisOrigin)
      throw InputError(where + ": fact id '" + id + "' is reserved");
    if (!seen.insert(id).second)
      throw retrieval::DuplicateFactId("duplicate fact id '" + id + "' in " +
                                       path);
    corpus.emplace_back(std::move(id), std::move(text));
  }
  return corpus;
}

struct Question {
  std::string id;
  std::string text;
  std::vector<std::string> choices;
  std::optional<std::size_t> answer;  // index into choices, when labelled
};

// Question file: JSONL, one object per line with "id", "question", "choices"
// (>= 2 strings) and optional "answer_idx".
inline std::vector<Question> load_questions(const std::string& path) {
  std::vector<std::string> lines = detail::split_lines(detail::read_file(path));
  std::vector<Question> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    std::string where = path + ":" + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("question") || !j["question"].is_string() ||
        !j.contains("choices") || !j["choices"].is_array())
      throw InputError(where +
                       ": expected {\"id\", \"question\", \"choices\"}");
    Question q;
    q.id = j["id"].get<std::string>();
    q.text = j["question"].get<std::string>();
    for (const auto& c : j["choices"]) {
      if (!c.is_string())
        throw InputError(where + ": choices must be strings");
      q.choices.push_back(c.get<std::string>());
    }
    if (q.id.empty()) throw InputError(where + ": empty question id");
    if (q.choices.size() < 2)
      throw InputError(where + ": need at least two choices");
    if (j.contains("answer_idx")) {
      if (!j["answer_idx"].is_number_unsigned() ||
          j["answer_idx"].get<std::size_t>() >= q.choices.size())
        throw InputError(where + ": answer_idx out of range");
      q.answer = j["answer_idx"].get<std::size_t>();
    }
    if (!seen.insert(q.id).second)
      throw InputError(where + ": duplicate question id '" + q.id + "'");
    out.push_back(std::move(q));
  }
  return out;
}

// Bank key under which a choice's hypothesis AMR is stored.
inline std::string hypothesis_amr_key(const std::string& question_id,
                                      std::size_t choice) {
  return "hyp:" + question_id + ":" + std::to_string(choice);
}

struct ActiveFact {
  std::string id;
  std::size_t path_count = 0;
  double retrieval_score = 0.0;
};

// Everything derived for one question-choice pair.
struct PairResult {
  std::size_t choice_index = 0;
  std::string choice_text;
  std::string hypothesis;
  std::vector<retrieval::FactRecord> pool;
  semgraph::AmrSg sg;
  std::vector<semgraph::EvidencePath> paths;
  std::vector<ActiveFact> active;
  semgraph::FactConnectionGraph connections;
  double raw_score = 0.0;
  double probability = 0.0;
};

struct QuestionResult {
  Question question;
  std::vector<PairResult> pairs;
  std::size_t predicted = 0;  // argmax probability, lowest index on ties
};

inline const PairResult& checked_pair(const QuestionResult& r, std::size_t j) {
  if (j >= r.pairs.size())
    throw ChoiceOutOfRange("choice " + std::to_string(j) +
                           " out of range for question '" + r.question.id +
                           "' with " + std::to_string(r.pairs.size()) +
                           " choices");
  return r.pairs[j];
}

// Loads every configured file up front and answers questions against them.
// Pairs with no evidence path degrade to hypothesis-only scoring: the active
// set is empty and the connection graph is the single hypothesis node.
class Engine {
 public:
  explicit Engine(PipelineConfig config)
      : cfg_(validated(std::move(config))),
        provider_(cfg_.dim, cfg_.seed),
        keys_fn_(semgraph::default_keys_fn()) {
    if (cfg_.core_corpus.empty() && cfg_.common_corpus.empty())
      throw ConfigError("no fact corpus configured");
    if (cfg_.amr_bank.empty()) throw ConfigError("no AMR bank configured");
    if (cfg_.questions.empty()) throw ConfigError("no question file configured");
    if (!cfg_.core_corpus.empty())
      core_index_ = retrieval::build_index(load_corpus(cfg_.core_corpus));
    if (!cfg_.common_corpus.empty())
      common_index_ = retrieval::build_index(load_corpus(cfg_.common_corpus));
    bank_ = penman::parse_amr_bank(detail::read_file(cfg_.amr_bank));
    questions_ = load_questions(cfg_.questions);
    for (std::size_t i = 0; i < questions_.size(); ++i)
      by_id_[questions_[i].id] = i;
  }

  const PipelineConfig& config() const { return cfg_; }
  const std::vector<Question>& questions() const { return questions_; }
  const penman::AmrBank& bank() const { return bank_; }

  const Question& question(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end())
      throw UnknownQuestion("unknown question id '" + id + "'");
    return questions_[it->second];
  }

  std::vector<std::string> hypotheses(const Question& q) const {
    std::vector<std::string> out;
    out.reserve(q.choices.size());
    for (const std::string& choice : q.choices)
      out.push_back(retrieval::generate_hypothesis(q.text, choice));
    return out;
  }

  std::vector<retrieval::FactRecord> pool_for(std::string_view query) const {
    return retrieval::assemble_pool(
        retrieval::retrieve(core_index_, query, cfg_.pool_size),
        retrieval::retrieve(common_index_, query, cfg_.pool_size), cfg_.n_core,
        cfg_.n_common);
  }

  // Graph work only; raw_score/probability stay 0 and predicted stays 0.
  QuestionResult analyze(const Question& q) const {
    std::vector<const AmrGraph*> hyp_graphs;
    std::vector<std::set<ConceptKey>> keysets;
    for (std::size_t j = 0; j < q.choices.size(); ++j) {
      std::string key = hypothesis_amr_key(q.id, j);
      const AmrGraph* g = bank_.find(key);
      if (!g) throw MissingAmr("no AMR under bank key '" + key + "'");
      hyp_graphs.push_back(g);
      keysets.push_back(semgraph::key_set(keys_fn_(*g)));
    }
    auto [question_keys, choice_keys] =
        semgraph::split_question_choice_nodes(keysets);

    QuestionResult result;
    result.question = q;
    std::vector<std::string> hyps = hypotheses(q);
    for (std::size_t j = 0; j < q.choices.size(); ++j)
      result.pairs.push_back(build_pair(q, j, hyps[j], *hyp_graphs[j],
                                        keysets[j], question_keys,
                                        choice_keys[j]));
    return result;
  }

  QuestionResult process(const Question& q,
                         const reasoner::ReasonerParams& params) const {
    if (params.dim != cfg_.dim)
      throw ConfigError("reasoner parameters have dim " +
                        std::to_string(params.dim) +
                        " but the pipeline is configured for dim " +
                        std::to_string(cfg_.dim));
    QuestionResult result = analyze(q);

    std::vector<reasoner::ChoiceInstance> instances;
    for (PairResult& pair : result.pairs) {
      std::unordered_map<std::string, const std::string*> text_of;
      for (const auto& rec : pair.pool) text_of[rec.fact_id] = &rec.text;
      std::vector<std::string> fact_texts;
      std::vector<std::string> all_texts = {pair.hypothesis};
      for (const ActiveFact& a : pair.active) {
        fact_texts.push_back(*text_of.at(a.id));
        all_texts.push_back(fact_texts.back());
      }
      reasoner::ChoiceInstance inst;
      inst.features =
          reasoner::pool_node_features(provider_, pair.hypothesis, fact_texts);
      inst.norm_adjacency =
          reasoner::normalize_adjacency(pair.connections.adjacency);
      inst.x_cls = provider_.cls(all_texts);
      instances.push_back(std::move(inst));
    }

    reasoner::ChoiceScores scores = reasoner::score_choices(instances, params);
    for (std::size_t j = 0; j < result.pairs.size(); ++j) {
      result.pairs[j].raw_score = scores.raw[static_cast<Eigen::Index>(j)];
      result.pairs[j].probability = scores.probs[static_cast<Eigen::Index>(j)];
    }
    Eigen::Index best = 0;
    scores.probs.maxCoeff(&best);
    result.predicted = static_cast<std::size_t>(best);
    return result;
  }

  QuestionResult process_by_id(const std::string& id,
                               const reasoner::ReasonerParams& params) const {
    return process(question(id), params);
  }

 private:
  static PipelineConfig validated(PipelineConfig c) {
    c.validate();
    return c;
  }

  PairResult build_pair(const Question& q, std::size_t j,
                        const std::string& hypothesis, const AmrGraph& hyp_amr,
                        const std::set<ConceptKey>& hyp_keyset,
                        const std::set<ConceptKey>& question_keys,
                        const std::set<ConceptKey>& choice_keys) const {
    PairResult pair;
    pair.choice_index = j;
    pair.choice_text = q.choices[j];
    pair.hypothesis = hypothesis;
    pair.pool =
        pool_for(cfg_.query_from_question ? std::string_view(q.text)
                                          : std::string_view(hypothesis));

    penman::AmrBank pool_bank;
    std::map<std::string, std::set<ConceptKey>> fact_keysets;
    std::map<std::string, double> scores;
    for (const auto& rec : pair.pool) {
      const AmrGraph* g = bank_.find(rec.fact_id);
      if (!g) throw MissingAmr("no AMR under bank key '" + rec.fact_id + "'");
      pool_bank.entries.emplace_back(rec.fact_id, *g);
      fact_keysets[rec.fact_id] = semgraph::key_set(keys_fn_(*g));
      scores[rec.fact_id] = rec.score;
    }

    pair.sg = semgraph::build_amr_sg(hyp_amr, pool_bank, keys_fn_,
                                     question_keys, choice_keys);
    pair.paths = semgraph::find_evidence_paths(pair.sg, cfg_.max_path_nodes);
    std::map<std::string, std::size_t> counts =
        semgraph::fact_path_counts(pair.paths);
    std::vector<std::string> active_ids =
        semgraph::select_active_facts(pair.paths, scores, cfg_.active_cap);
    for (const std::string& id : active_ids)
      pair.active.push_back({id, counts.at(id), scores.at(id)});
    pair.connections = semgraph::build_fact_connection_graph(
        pair.sg, hyp_keyset, active_ids, fact_keysets);
    return pair;
  }

  PipelineConfig cfg_;
  reasoner::HashedEmbeddingProvider provider_;
  semgraph::KeysFn keys_fn_;
  retrieval::CorpusIndex core_index_;
  retrieval::CorpusIndex common_index_;
  penman::AmrBank bank_;
  std::vector<Question> questions_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

inline std::vector<QuestionResult> run_pipeline(
    const Engine& engine, const reasoner::ReasonerParams& params) {
  std::vector<QuestionResult> out;
  for (const Question& q : engine.questions())
    out.push_back(engine.process(q, params));
  return out;
}

// Load parameters from disk, or draw a fresh seeded set when no path given.
inline reasoner::ReasonerParams params_for(const PipelineConfig& cfg,
                                           const std::string& params_path) {
  if (params_path.empty())
    return reasoner::ReasonerParams::init(cfg.layers, cfg.heads, cfg.dim,
                                          cfg.seed);
  reasoner::ReasonerParams p = reasoner::load_params(params_path);
  if (p.dim != cfg.dim)
    throw ConfigError("params file '" + params_path + "' has dim " +
                      std::to_string(p.dim) + "; set --dim to match");
  return p;
}

struct EvalRow {
  std::string question_id;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  bool correct = false;
  std::vector<std::size_t> active_counts;  // per choice
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<EvalRow> rows;
};

inline EvalResult evaluate(const Engine& engine,
                           const reasoner::ReasonerParams& params) {
  const std::vector<Question>& qs = engine.questions();
  if (qs.empty()) throw EmptyDataset("question file holds no questions");
  EvalResult out;
  std::size_t hits = 0;
  for (const Question& q : qs) {
    if (!q.answer)
      throw MissingLabel("question '" + q.id + "' has no answer_idx");
    QuestionResult r = engine.process(q, params);
    EvalRow row;
    row.question_id = q.id;
    row.predicted = r.predicted;
    row.gold = *q.answer;
    row.correct = r.predicted == *q.answer;
    for (const PairResult& p : r.pairs)
      row.active_counts.push_back(p.active.size());
    if (row.correct) ++hits;
    out.rows.push_back(std::move(row));
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(qs.size());
  return out;
}

inline std::string eval_tsv(const EvalResult& r) {
  std::ostringstream out;
  out << "question_id\tpredicted\tgold\tcorrect\tactive_counts\n";
  for (const EvalRow& row : r.rows) {
    out << row.question_id << '\t' << row.predicted << '\t' << row.gold << '\t'
        << (row.correct ? 1 : 0) << '\t';
    for (std::size_t j = 0; j < row.active_counts.size(); ++j) {
      if (j) out << ',';
      out << row.active_counts[j];
    }
    out << '\n';
  }
  return out.str();
}

// -- reports ---------------------------------------------------------------

inline ordered_json pair_report(const Question& q, const PairResult& p,
                                bool with_scores) {
  ordered_json j;
  j["question_id"] = q.id;
  j["choice_index"] = p.choice_index;
  j["choice"] = p.choice_text;
  j["hypothesis"] = p.hypothesis;
  j["pool_size"] = p.pool.size();
  j["question_nodes"] = p.sg.question_nodes;
  j["choice_nodes"] = p.sg.choice_nodes;
  j["nodes"] = p.sg.nodes;
  ordered_json edges = ordered_json::array();
  for (const semgraph::SgEdge& e : p.sg.edges)
    edges.push_back({{"a", e.a}, {"b", e.b}, {"origin", e.origin}});
  j["edges"] = edges;
  j["merged_facts"] = p.sg.merged_fact_ids;
  ordered_json paths = ordered_json::array();
  for (const semgraph::EvidencePath& path : p.paths)
    paths.push_back(
        {{"nodes", path.node_sequence}, {"origins", path.edge_origins}});
  j["paths"] = paths;
  ordered_json active = ordered_json::array();
  for (const ActiveFact& a : p.active)
    active.push_back({{"id", a.id},
                      {"path_count", a.path_count},
                      {"retrieval_score", a.retrieval_score}});
  j["active_facts"] = active;
  j["adjacency"] = p.connections.adjacency;
  if (with_scores) {
    j["raw_score"] = p.raw_score;
    j["probability"] = p.probability;
  }
  return j;
}

inline std::string summary_line(const QuestionResult& r) {
  ordered_json probs = ordered_json::array();
  for (const PairResult& p : r.pairs) probs.push_back(p.probability);
  return r.question.id + "\tpredicted=" + std::to_string(r.predicted) +
         "\tprobs=" + probs.dump();
}

namespace detail {

// Question ids become file names; anything outside [A-Za-z0-9._-] is '_'.
inline std::string safe_filename(std::string_view s) {
  std::string out;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

}  // namespace detail

// One `<qid>.<choice>.json` per pair under out_dir; returns what was written.
inline std::vector<std::filesystem::path> write_reports(
    const QuestionResult& r, const std::filesystem::path& out_dir,
    bool with_scores) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const PairResult& p : r.pairs) {
    std::filesystem::path file =
        out_dir / (detail::safe_filename(r.question.id) + "." +
                   std::to_string(p.choice_index) + ".json");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InputError("cannot write '" + file.string() + "'");
    out << pair_report(r.question, p, with_scores).dump(2) << '\n';
    written.push_back(std::move(file));
  }
  return written;
}

// `a→b→c` over the path's concept keys.
inline std::string chain_text(const semgraph::EvidencePath& path) {
  std::string out;
  for (std::size_t i = 0; i < path.node_sequence.size(); ++i) {
    if (i) out += "→";
    out += path.node_sequence[i];
  }
  return out;
}

inline std::string inspect_text(const QuestionResult& r, std::size_t j) {
  const PairResult& p = checked_pair(r, j);
  std::ostringstream out;
  out << "question " << r.question.id << " choice " << p.choice_index << ": "
      << p.choice_text << "\n";
  out << "hypothesis: " << p.hypothesis << "\n";
  out << "question nodes:";
  for (const ConceptKey& k : p.sg.question_nodes) out << ' ' << k;
  out << "\nchoice nodes:";
  for (const ConceptKey& k : p.sg.choice_nodes) out << ' ' << k;
  out << '\n';
  if (p.sg.merged_fact_ids.empty()) {
    out << "merged facts: none (the graph is the hypothesis alone)\n";
  } else {
    out << "merged facts (" << p.sg.merged_fact_ids.size() << "):";
    for (const std::string& id : p.sg.merged_fact_ids) out << ' ' << id;
    out << '\n';
  }
  out << "paths (" << p.paths.size() << "):\n";
  for (const semgraph::EvidencePath& path : p.paths) {
    out << "  " << chain_text(path) << "\n    via";
    for (const std::string& origin : path.edge_origins) out << ' ' << origin;
    out << '\n';
  }
  out << "active facts (" << p.active.size() << "):\n";
  for (const ActiveFact& a : p.active)
    out << "  " << a.id << " paths=" << a.path_count
        << " score=" << a.retrieval_score << '\n';
  std::size_t n = p.connections.adjacency.size();
  out << "adjacency (" << n << "x" << n << "):\n";
  for (const std::vector<int>& row : p.connections.adjacency) {
    out << ' ';
    for (int v : row) out << ' ' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace amrsg::pipeline
