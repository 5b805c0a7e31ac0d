// Release gate: ten self-contained checks over the full toolkit, one
// [PASS]/[FAIL] line each. The process exit status is the number of
// failures, so a zero exit means the gate is green.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "amrsg/pipeline.hpp"
#include "support/oracles.hpp"

using namespace amrsg;

namespace {

int failures = 0;

void report(int n, bool pass, const std::string& text) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << n << ": "
            << text << '\n';
  if (!pass) ++failures;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

std::string with_time(const std::string& text, const Stopwatch& watch) {
  std::ostringstream out;
  out << text << " (" << watch.seconds() << "s)";
  return out.str();
}

// Run a criterion body; any escaped exception fails it with the message.
template <typename Fn>
void criterion(int n, Fn&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(n, false, std::string("unexpected exception: ") + e.what());
  }
}

// Random key-level graph with labeled parallel edges and a few hypothesis
// edges that never directly bridge question and choice nodes.
semgraph::AmrSg random_sg(SplitMix64& rng) {
  semgraph::AmrSg sg;
  std::size_t n = 4 + rng.below(9);  // 4..12 nodes
  std::vector<penman::ConceptKey> keys;
  for (std::size_t i = 0; i < n; ++i) {
    keys.push_back(std::string(1, static_cast<char>('a' + i)));
    sg.nodes.insert(keys.back());
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);
  std::size_t nq = 1 + rng.below(2), nc = 1 + rng.below(2);
  for (std::size_t i = 0; i < nq; ++i) sg.question_nodes.insert(keys[perm[i]]);
  for (std::size_t i = 0; i < nc; ++i)
    sg.choice_nodes.insert(keys[perm[nq + i]]);
  const std::vector<std::string> origins = {"f1", "f2", "f3",
                                            semgraph::kHypothesisOrigin};
  sg.merged_fact_ids = {"f1", "f2", "f3"};
  std::size_t ne = n + rng.below(n);
  for (std::size_t k = 0; k < ne; ++k) {
    std::size_t s = rng.below(n), t = rng.below(n);
    if (s == t) continue;
    const std::string& origin = origins[rng.below(origins.size())];
    if (origin == semgraph::kHypothesisOrigin &&
        ((sg.question_nodes.count(keys[s]) &&
          sg.choice_nodes.count(keys[t])) ||
         (sg.question_nodes.count(keys[t]) &&
          sg.choice_nodes.count(keys[s]))))
      continue;
    sg.edges.insert(semgraph::SgEdge(keys[s], keys[t], origin));
  }
  return sg;
}

bool path_invariants_hold(const semgraph::AmrSg& sg,
                          const semgraph::EvidencePath& path, std::size_t cap,
                          std::string& why) {
  if (path.node_sequence.size() < 2 || path.node_sequence.size() > cap) {
    why = "path length out of bounds";
    return false;
  }
  if (path.edge_origins.size() != path.node_sequence.size() - 1) {
    why = "origin count does not match edge count";
    return false;
  }
  if (!sg.question_nodes.count(path.node_sequence.front()) ||
      !sg.choice_nodes.count(path.node_sequence.back())) {
    why = "path endpoints are not question/choice nodes";
    return false;
  }
  std::set<penman::ConceptKey> distinct(path.node_sequence.begin(),
                                        path.node_sequence.end());
  if (distinct.size() != path.node_sequence.size()) {
    why = "path revisits a node";
    return false;
  }
  for (std::size_t i = 0; i + 1 < path.node_sequence.size(); ++i) {
    if (path.edge_origins[i] == semgraph::kHypothesisOrigin) {
      why = "path uses a hypothesis edge";
      return false;
    }
    if (!sg.edges.count(semgraph::SgEdge(path.node_sequence[i],
                                         path.node_sequence[i + 1],
                                         path.edge_origins[i]))) {
      why = "path step is not a graph edge";
      return false;
    }
  }
  return true;
}

pipeline::PipelineConfig fixture_config() {
  std::string base = std::string(AMRSG_FIXTURE_DIR) + "/case_studies/";
  pipeline::PipelineConfig cfg;
  cfg.core_corpus = base + "core.tsv";
  cfg.common_corpus = base + "common.tsv";
  cfg.amr_bank = base + "amr_bank.txt";
  cfg.questions = base + "questions.jsonl";
  return cfg;
}

void criterion_1_penman_round_trip() {
  Stopwatch watch;
  SplitMix64 rng(101);
  bool ok = true;
  std::string detail = "1000 random graphs round-trip up to isomorphism and "
                       "the planet example parses to its documented shape";
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    penman::AmrGraph g = testsupport::random_amr_graph(rng, 8);
    penman::AmrGraph back = penman::parse_penman(penman::serialize_penman(g));
    if (!testsupport::isomorphic(g, back)) {
      ok = false;
      detail = "round-trip changed the graph at trial " +
               std::to_string(trial);
    }
  }
  penman::AmrGraph planet =
      penman::parse_penman("(p / planet :name (n / name :op1 \"Earth\"))");
  auto keys = penman::concept_keys(planet);
  if (planet.variables.size() != 2 || planet.edges.size() != 1 ||
      planet.attributes.size() != 1 || keys.at("n") != "earth") {
    ok = false;
    detail = "planet example shape or concept key is wrong";
  }
  if (watch.seconds() >= 5.0) {
    ok = false;
    detail = "exceeded the 5s budget";
  }
  report(1, ok, with_time(detail, watch));
}

void criterion_2_path_enumeration() {
  Stopwatch watch;
  SplitMix64 rng(202);
  bool ok = true;
  std::string detail = "200 random graphs: depth-first search equals "
                       "brute-force enumeration at 8 nodes";
  for (int trial = 0; trial < 200 && ok; ++trial) {
    semgraph::AmrSg sg = random_sg(rng);
    auto impl = semgraph::find_evidence_paths(sg, 8);
    for (const auto& path : impl) {
      std::string why;
      if (!path_invariants_hold(sg, path, 8, why)) {
        ok = false;
        detail = why + " at trial " + std::to_string(trial);
        break;
      }
    }
    auto sorted_impl = impl;
    std::sort(sorted_impl.begin(), sorted_impl.end());
    auto oracle = testsupport::brute_force_paths(sg, 8);
    std::sort(oracle.begin(), oracle.end());
    if (ok && sorted_impl != oracle) {
      ok = false;
      detail = "path sets differ at trial " + std::to_string(trial);
    }
  }
  if (watch.seconds() >= 30.0) {
    ok = false;
    detail = "exceeded the 30s budget";
  }
  report(2, ok, with_time(detail, watch));
}

void criterion_3_merge_order_independence() {
  Stopwatch watch;
  SplitMix64 rng(303);
  bool ok = true;
  std::string detail =
      "100 random pools build the same graph under 5 shuffles each";
  for (int trial = 0; trial < 100 && ok; ++trial) {
    penman::AmrGraph hyp = testsupport::random_amr_graph(rng, 5);
    penman::AmrBank pool;
    std::size_t nf = 2 + rng.below(6);
    for (std::size_t i = 0; i < nf; ++i)
      pool.entries.emplace_back("f" + std::to_string(i),
                                testsupport::random_amr_graph(rng, 4));
    std::set<penman::ConceptKey> hkeys =
        semgraph::key_set(semgraph::default_keys_fn()(hyp));
    std::set<penman::ConceptKey> q, c;
    bool into_q = true;
    for (const auto& k : hkeys) {
      (into_q ? q : c).insert(k);
      into_q = !into_q;
    }
    semgraph::AmrSg base =
        semgraph::build_amr_sg(hyp, pool, semgraph::default_keys_fn(), q, c);
    for (int shuffle = 0; shuffle < 5 && ok; ++shuffle) {
      penman::AmrBank shuffled = pool;
      for (std::size_t i = shuffled.entries.size(); i > 1; --i)
        std::swap(shuffled.entries[i - 1], shuffled.entries[rng.below(i)]);
      semgraph::AmrSg again = semgraph::build_amr_sg(
          hyp, shuffled, semgraph::default_keys_fn(), q, c);
      if (again.nodes != base.nodes || again.edges != base.edges ||
          again.merged_fact_ids != base.merged_fact_ids) {
        ok = false;
        detail = "pool order changed the graph at trial " +
                 std::to_string(trial);
      }
    }
  }
  if (watch.seconds() >= 10.0) {
    ok = false;
    detail = "exceeded the 10s budget";
  }
  report(3, ok, with_time(detail, watch));
}

void criterion_4_case_studies() {
  Stopwatch watch;
  pipeline::Engine engine(fixture_config());
  struct Case {
    std::string qid;
    std::size_t choice;
    std::string chain;
    std::vector<std::string> facts;
  };
  const std::vector<Case> cases = {
      {"obqa-seismograph", 2,
       "seismograph→tool→measure-01→size-01→earthquake→ground",
       {"seis-tool", "quake-ground"}},
      {"obqa-algae", 0, "algae→find-01→body→water→store-01→reservoir",
       {"algae-water", "water-reservoir"}},
      {"obqa-photosynthesis", 0, "photosynthesis→plant→cabbage",
       {"plant-photo", "skunk-cabbage"}},
      {"obqa-recyclable", 1, "recycle-01→paper→notebook",
       {"paper-recycle", "notebook-paper"}},
      {"obqa-weasel", 0, "energy→move-01→weasel",
       {"animal-energy", "weasel-body"}},
      {"obqa-solar", 2, "natural-03→energy→generate-01→sunlight→panel",
       {"solar-thermal", "solar-home"}},
  };
  bool ok = true;
  std::string detail =
      "all six documented chains are emitted verbatim with their facts active";
  for (const Case& c : cases) {
    pipeline::QuestionResult r = engine.analyze(engine.question(c.qid));
    const pipeline::PairResult& p = pipeline::checked_pair(r, c.choice);
    bool found = false;
    for (const auto& path : p.paths)
      found = found || pipeline::chain_text(path) == c.chain;
    if (!found) {
      ok = false;
      detail = c.qid + ": chain '" + c.chain + "' missing";
      break;
    }
    for (const std::string& id : c.facts) {
      bool active = false;
      for (const auto& a : p.active) active = active || a.id == id;
      if (!active) {
        ok = false;
        detail = c.qid + ": fact '" + id + "' not active";
      }
    }
    if (!ok) break;
  }
  report(4, ok, with_time(detail, watch));
}

void criterion_5_adjacency_normalization() {
  Stopwatch watch;
  SplitMix64 rng(505);
  bool ok = true;
  std::string detail = "symmetric normalization matches the dense oracle to "
                       "1e-12 with eigenvalues in [-1, 1]";
  for (int trial = 0; trial < 100 && ok; ++trial) {
    std::size_t n = 1 + rng.below(10);
    std::vector<std::vector<int>> A(n, std::vector<int>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
      A[i][i] = 1;
      for (std::size_t j = i + 1; j < n; ++j)
        A[i][j] = A[j][i] = rng.below(2) ? 1 : 0;
    }
    Eigen::MatrixXd L = reasoner::normalize_adjacency(A);
    Eigen::MatrixXd oracle = testsupport::normalize_adjacency_oracle(A);
    if ((L - oracle).cwiseAbs().maxCoeff() > 1e-12) {
      ok = false;
      detail = "oracle mismatch at trial " + std::to_string(trial);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(L);
    if (eig.eigenvalues().minCoeff() < -1.0 - 1e-9 ||
        eig.eigenvalues().maxCoeff() > 1.0 + 1e-9) {
      ok = false;
      detail = "eigenvalue escaped [-1, 1] at trial " + std::to_string(trial);
    }
  }
  report(5, ok, with_time(detail, watch));
}

void criterion_6_gradcheck() {
  Stopwatch watch;
  bool ok = true;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto dataset = reasoner::make_toy_dataset(1, 4, 2, 8, seed);
    auto params = reasoner::ReasonerParams::init(2, 2, 8, seed);
    worst = std::max(worst, reasoner::backward_and_gradcheck(dataset[0],
                                                             params, 1e-5));
  }
  std::ostringstream detail;
  detail << "analytic and finite-difference gradients agree on 20 seeded "
            "instances, worst relative error "
         << worst;
  if (worst >= 1e-4) {
    ok = false;
    detail << " >= 1e-4";
  }
  if (watch.seconds() >= 10.0) {
    ok = false;
    detail << "; exceeded the 10s budget";
  }
  report(6, ok, with_time(detail.str(), watch));
}

void criterion_7_softmax() {
  Stopwatch watch;
  SplitMix64 rng(707);
  bool ok = true;
  std::string detail =
      "1000 vectors: probabilities sum to 1 and shifts leave them unchanged";
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::size_t n = 2 + rng.below(6);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-50, 50);
    Eigen::VectorXd p = reasoner::softmax(v);
    if (std::abs(p.sum() - 1.0) > 1e-9) {
      ok = false;
      detail = "probabilities missed 1 at trial " + std::to_string(trial);
    }
    Eigen::VectorXd shifted = reasoner::softmax(
        (v.array() + rng.uniform(-100, 100)).matrix());
    if ((p - shifted).cwiseAbs().maxCoeff() > 1e-12) {
      ok = false;
      detail = "shift changed the result at trial " + std::to_string(trial);
    }
  }
  report(7, ok, with_time(detail, watch));
}

void criterion_8_toy_training() {
  Stopwatch watch;
  bool ok = true;
  std::string detail = "training separates the toy set within 500 epochs and "
                       "other depths run without divergence";
  auto dataset = reasoner::make_toy_dataset(10, 4, 2, 32, 2024);
  reasoner::TrainConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.dim = 32;
  cfg.lr = 0.05;
  cfg.epochs = 500;
  cfg.seed = 7;
  reasoner::TrainResult result = reasoner::train_toy(dataset, cfg);
  bool perfect = false;
  for (double acc : result.accuracy_curve) perfect = perfect || acc == 1.0;
  if (!perfect) {
    ok = false;
    detail = "accuracy never reached 1.0 within 500 epochs";
  }
  for (std::size_t layers : {std::size_t{1}, std::size_t{3}, std::size_t{4}}) {
    cfg.layers = layers;
    cfg.epochs = 60;
    reasoner::TrainResult other = reasoner::train_toy(dataset, cfg);
    for (double acc : other.accuracy_curve)
      if (!std::isfinite(acc) || acc < 0.0 || acc > 1.0) {
        ok = false;
        detail = "depth " + std::to_string(layers) + " went out of range";
      }
  }
  report(8, ok, with_time(detail, watch));
}

void criterion_9_retrieval() {
  Stopwatch watch;
  bool ok = true;
  std::string detail = "scores match the frozen references to 1e-6 and the "
                       "pool fills 10 curated plus 90 open slots";
  const std::vector<std::pair<std::string, std::string>> corpus = {
      {"f1", "wind causes erosion"},
      {"f2", "water causes erosion over time"},
      {"f3", "earthquakes cause ground shaking"},
  };
  auto index = retrieval::build_index(corpus);
  auto score_of = [&](const std::string& query, const std::string& id) {
    for (const auto& rec : retrieval::retrieve(index, query, 3))
      if (rec.fact_id == id) return rec.score;
    return 0.0;
  };
  const struct {
    const char* query;
    const char* id;
    double expected;
  } frozen[] = {
      {"water", "f2", 0.8898244769590921},
      {"causes erosion", "f1", 1.047096693003158},
      {"causes erosion", "f2", 0.8527900901778297},
  };
  for (const auto& f : frozen)
    if (std::abs(score_of(f.query, f.id) - f.expected) > 1e-6) {
      ok = false;
      detail = std::string("score drifted for query '") + f.query + "'";
    }

  std::vector<retrieval::FactRecord> core_hits, common_hits;
  for (int i = 0; i < 20; ++i)
    core_hits.push_back({"c" + std::to_string(i), "text", 100.0 - i,
                         retrieval::FactSource::core});
  for (int i = 0; i < 120; ++i)
    common_hits.push_back({"m" + std::to_string(i), "text", 50.0 - i * 0.1,
                           retrieval::FactSource::common});
  auto pool = retrieval::assemble_pool(core_hits, common_hits, 10, 90);
  if (pool.size() != 100) {
    ok = false;
    detail = "pool size is " + std::to_string(pool.size());
  } else {
    for (std::size_t i = 0; i < 10 && ok; ++i)
      if (pool[i].fact_id != "c" + std::to_string(i) ||
          pool[i].source != retrieval::FactSource::core) {
        ok = false;
        detail = "curated slots are wrong";
      }
    for (std::size_t i = 0; i < 90 && ok; ++i)
      if (pool[10 + i].fact_id != "m" + std::to_string(i) ||
          pool[10 + i].source != retrieval::FactSource::common) {
        ok = false;
        detail = "open slots are wrong";
      }
  }
  report(9, ok, with_time(detail, watch));
}

void criterion_10_pipeline_determinism() {
  Stopwatch watch;
  bool ok = true;
  std::string detail = "two fresh runs emit byte-identical reports within "
                       "the active-fact cap and path rules";
  pipeline::PipelineConfig cfg = fixture_config();
  auto params = pipeline::params_for(cfg, "");
  pipeline::Engine first(cfg), second(cfg);
  auto run_a = pipeline::run_pipeline(first, params);
  auto run_b = pipeline::run_pipeline(second, params);
  if (run_a.size() != run_b.size()) {
    ok = false;
    detail = "question counts differ between runs";
  }
  for (std::size_t i = 0; ok && i < run_a.size(); ++i) {
    if (pipeline::summary_line(run_a[i]) != pipeline::summary_line(run_b[i])) {
      ok = false;
      detail = "summaries differ for " + run_a[i].question.id;
      break;
    }
    for (std::size_t j = 0; j < run_a[i].pairs.size(); ++j) {
      const pipeline::PairResult& p = run_a[i].pairs[j];
      if (pipeline::pair_report(run_a[i].question, p, true).dump() !=
          pipeline::pair_report(run_b[i].question, run_b[i].pairs[j], true)
              .dump()) {
        ok = false;
        detail = "reports differ for " + run_a[i].question.id;
        break;
      }
      if (p.active.size() > cfg.active_cap) {
        ok = false;
        detail = "active set exceeds the cap for " + run_a[i].question.id;
        break;
      }
      for (const auto& path : p.paths) {
        std::string why;
        if (!path_invariants_hold(p.sg, path, cfg.max_path_nodes, why)) {
          ok = false;
          detail = why + " for " + run_a[i].question.id;
          break;
        }
      }
    }
  }
  report(10, ok, with_time(detail, watch));
}

}  // namespace

int main() {
  criterion(1, criterion_1_penman_round_trip);
  criterion(2, criterion_2_path_enumeration);
  criterion(3, criterion_3_merge_order_independence);
  criterion(4, criterion_4_case_studies);
  criterion(5, criterion_5_adjacency_normalization);
  criterion(6, criterion_6_gradcheck);
  criterion(7, criterion_7_softmax);
  criterion(8, criterion_8_toy_training);
  criterion(9, criterion_9_retrieval);
  criterion(10, criterion_10_pipeline_determinism);
  return failures;
}
