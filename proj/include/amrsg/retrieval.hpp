#pragma once

// Local fact retrieval: hypothesis generation from a question-choice pair,
// an Okapi BM25 index over a line-oriented corpus, and assembly of the
// per-pair fact pool from core and common hits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "amrsg/common.hpp"

namespace amrsg::retrieval {

struct EmptyInput : InputError {
  using InputError::InputError;
};

struct DuplicateFactId : InputError {
  using InputError::InputError;
};

enum class FactSource { core, common };

struct FactRecord {
  std::string fact_id;
  std::string text;
  double score = 0.0;  // retrieval score, unitless, >= 0
  FactSource source = FactSource::common;
};

struct Hypothesis {
  std::string question_id;
  std::size_t choice_index = 0;
  std::string text;
};

namespace detail {

inline std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!out.empty()) pending = true;
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

// First run of three or more underscores, if any.
inline std::pair<std::size_t, std::size_t> find_blank(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '_') {
      std::size_t j = i;
      while (j < s.size() && s[j] == '_') ++j;
      if (j - i >= 3) return {i, j - i};
      i = j;
    } else {
      ++i;
    }
  }
  return {std::string_view::npos, 0};
}

}  // namespace detail

// Declarative statement for one question-choice pair. The choice replaces a
// blank marker when the question has one; otherwise it is appended (with a
// trailing question mark dropped first).
inline std::string generate_hypothesis(std::string_view question,
                                       std::string_view choice) {
  std::string q = detail::collapse_spaces(question);
  std::string c = detail::collapse_spaces(choice);
  if (q.empty() || c.empty())
    throw EmptyInput("question and choice must be non-empty");

  auto [at, len] = detail::find_blank(q);
  if (at != std::string_view::npos) {
    q.replace(at, len, c);
    return detail::collapse_spaces(q);
  }
  if (q.back() == '?') {
    q.pop_back();
    q = detail::collapse_spaces(q);
  }
  return q + " " + c;
}

// Inverted Okapi BM25 statistics. Immutable once built; retrieval is
// read-only and safe to run concurrently.
struct CorpusIndex {
  struct Document {
    std::string fact_id;
    std::string text;
    std::vector<std::string> tokens;
    std::unordered_map<std::string, std::size_t> term_freq;
  };

  std::vector<Document> documents;
  std::unordered_map<std::string, std::size_t> doc_freq;
  double avg_doc_len = 0.0;
  double k1 = 1.2;
  double b = 0.75;
};

inline CorpusIndex build_index(
    const std::vector<std::pair<std::string, std::string>>& corpus,
    double k1 = 1.2, double b = 0.75) {
  if (k1 <= 0.0 || b < 0.0 || b > 1.0)
    throw InputError("BM25 parameters out of range: k1 > 0, 0 <= b <= 1");
  CorpusIndex index;
  index.k1 = k1;
  index.b = b;
  std::size_t total_len = 0;
  for (const auto& [fact_id, text] : corpus) {
    for (const auto& doc : index.documents)
      if (doc.fact_id == fact_id)
        throw DuplicateFactId("duplicate fact id '" + fact_id + "'");
    CorpusIndex::Document doc;
    doc.fact_id = fact_id;
    doc.text = text;
    doc.tokens = tokenize(text);
    for (const std::string& t : doc.tokens) ++doc.term_freq[t];
    for (const auto& [t, tf] : doc.term_freq) ++index.doc_freq[t];
    total_len += doc.tokens.size();
    index.documents.push_back(std::move(doc));
  }
  if (!index.documents.empty())
    index.avg_doc_len =
        static_cast<double>(total_len) / index.documents.size();
  return index;
}

// score(q, d) = sum over distinct query terms t of
//   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl)),
//   idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1).
// Top m by score descending (ties by fact id); zero scores are dropped.
inline std::vector<FactRecord> retrieve(const CorpusIndex& index,
                                        std::string_view query,
                                        std::size_t m) {
  if (m < 1) throw InputError("retrieve: m must be >= 1");
  std::vector<std::string> qtokens = tokenize(query);
  std::sort(qtokens.begin(), qtokens.end());
  qtokens.erase(std::unique(qtokens.begin(), qtokens.end()), qtokens.end());

  const double n_docs = static_cast<double>(index.documents.size());
  std::vector<FactRecord> hits;
  for (const auto& doc : index.documents) {
    double score = 0.0;
    for (const std::string& t : qtokens) {
      auto it = doc.term_freq.find(t);
      if (it == doc.term_freq.end()) continue;
      double tf = static_cast<double>(it->second);
      double df = static_cast<double>(index.doc_freq.at(t));
      double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
      double norm =
          tf + index.k1 * (1.0 - index.b +
                           index.b * static_cast<double>(doc.tokens.size()) /
                               index.avg_doc_len);
      score += idf * tf * (index.k1 + 1.0) / norm;
    }
    if (score > 0.0)
      hits.push_back({doc.fact_id, doc.text, score, FactSource::common});
  }
  std::sort(hits.begin(), hits.end(),
            [](const FactRecord& a, const FactRecord& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.fact_id < b.fact_id;
            });
  if (hits.size() > m) hits.resize(m);
  return hits;
}

// Pool composition: up to n_core core hits first, then up to n_common common
// hits. A fact id appearing in both keeps its first (core) slot and the
// higher of the two scores.
inline std::vector<FactRecord> assemble_pool(
    const std::vector<FactRecord>& core_hits,
    const std::vector<FactRecord>& common_hits, std::size_t n_core,
    std::size_t n_common) {
  std::vector<FactRecord> pool;
  std::map<std::string, std::size_t> slot_of;

  auto add = [&](const FactRecord& hit, FactSource source,
                 std::size_t limit, std::size_t taken) -> bool {
    if (taken >= limit) return false;
    auto it = slot_of.find(hit.fact_id);
    if (it != slot_of.end()) {
      pool[it->second].score = std::max(pool[it->second].score, hit.score);
      return false;
    }
    FactRecord rec = hit;
    rec.source = source;
    slot_of[rec.fact_id] = pool.size();
    pool.push_back(std::move(rec));
    return true;
  };

  std::size_t taken = 0;
  for (const FactRecord& hit : core_hits)
    if (add(hit, FactSource::core, n_core, taken)) ++taken;
  taken = 0;
  for (const FactRecord& hit : common_hits)
    if (add(hit, FactSource::common, n_common, taken)) ++taken;
  return pool;
}

}  // namespace amrsg::retrieval
