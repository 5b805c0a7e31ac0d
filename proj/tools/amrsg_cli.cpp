// Command-line front end for the question-answering pipeline. Exit codes:
// 0 success, 1 bad input (files, flags, ids), 2 internal invariant failure.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amrsg/pipeline.hpp"

namespace {

using amrsg::pipeline::Engine;
using amrsg::pipeline::PipelineConfig;
using amrsg::pipeline::Question;
using amrsg::pipeline::QuestionResult;

struct Options {
  PipelineConfig cfg;
  std::string query_source = "hypothesis";
  std::string question_id;
  long long choice = -1;  // negative = every choice
  std::string out_dir;
  std::string params_path;
  std::string tsv_out;
  double epsilon = 1e-5;
  std::size_t trials = 3;
};

std::vector<const Question*> selected_questions(
    const std::vector<Question>& all, const std::string& id) {
  std::vector<const Question*> out;
  if (id.empty()) {
    for (const Question& q : all) out.push_back(&q);
    return out;
  }
  for (const Question& q : all)
    if (q.id == id) {
      out.push_back(&q);
      return out;
    }
  throw amrsg::pipeline::UnknownQuestion("unknown question id '" + id + "'");
}

std::vector<std::size_t> selected_choices(const QuestionResult& r,
                                          long long choice) {
  std::vector<std::size_t> out;
  if (choice < 0) {
    for (std::size_t j = 0; j < r.pairs.size(); ++j) out.push_back(j);
  } else {
    amrsg::pipeline::checked_pair(r, static_cast<std::size_t>(choice));
    out.push_back(static_cast<std::size_t>(choice));
  }
  return out;
}

void run_index(const Options& o) {
  if (o.cfg.core_corpus.empty() && o.cfg.common_corpus.empty())
    throw amrsg::pipeline::ConfigError("no fact corpus configured");
  for (const std::string& path : {o.cfg.core_corpus, o.cfg.common_corpus}) {
    if (path.empty()) continue;
    auto index = amrsg::retrieval::build_index(
        amrsg::pipeline::load_corpus(path));
    std::cout << path << "\tdocuments=" << index.documents.size()
              << "\tavg_len=" << index.avg_doc_len
              << "\tvocab=" << index.doc_freq.size() << '\n';
  }
}

void run_hypothesize(const Options& o) {
  if (o.cfg.questions.empty())
    throw amrsg::pipeline::ConfigError("no question file configured");
  auto questions = amrsg::pipeline::load_questions(o.cfg.questions);
  for (const Question* q : selected_questions(questions, o.question_id))
    for (std::size_t j = 0; j < q->choices.size(); ++j)
      std::cout << q->id << '\t' << j << '\t'
                << amrsg::retrieval::generate_hypothesis(q->text,
                                                         q->choices[j])
                << '\n';
}

void run_retrieve(const Options& o) {
  if (o.cfg.questions.empty())
    throw amrsg::pipeline::ConfigError("no question file configured");
  if (o.cfg.core_corpus.empty() && o.cfg.common_corpus.empty())
    throw amrsg::pipeline::ConfigError("no fact corpus configured");
  amrsg::retrieval::CorpusIndex core, common;
  if (!o.cfg.core_corpus.empty())
    core = amrsg::retrieval::build_index(
        amrsg::pipeline::load_corpus(o.cfg.core_corpus));
  if (!o.cfg.common_corpus.empty())
    common = amrsg::retrieval::build_index(
        amrsg::pipeline::load_corpus(o.cfg.common_corpus));

  auto questions = amrsg::pipeline::load_questions(o.cfg.questions);
  for (const Question* q : selected_questions(questions, o.question_id)) {
    if (o.choice >= 0 &&
        static_cast<std::size_t>(o.choice) >= q->choices.size())
      throw amrsg::pipeline::ChoiceOutOfRange(
          "choice " + std::to_string(o.choice) +
          " out of range for question '" + q->id + "' with " +
          std::to_string(q->choices.size()) + " choices");
    for (std::size_t j = 0; j < q->choices.size(); ++j) {
      if (o.choice >= 0 && static_cast<std::size_t>(o.choice) != j) continue;
      std::string hyp =
          amrsg::retrieval::generate_hypothesis(q->text, q->choices[j]);
      std::string_view query =
          o.cfg.query_from_question ? std::string_view(q->text)
                                    : std::string_view(hyp);
      auto pool = amrsg::retrieval::assemble_pool(
          amrsg::retrieval::retrieve(core, query, o.cfg.pool_size),
          amrsg::retrieval::retrieve(common, query, o.cfg.pool_size),
          o.cfg.n_core, o.cfg.n_common);
      std::cout << "# " << q->id << " choice " << j << ": " << hyp << '\n';
      for (const auto& rec : pool)
        std::cout << rec.fact_id << '\t' << rec.score << '\t'
                  << (rec.source == amrsg::retrieval::FactSource::core
                          ? "core"
                          : "common")
                  << '\t' << rec.text << '\n';
    }
  }
}

void run_build_sg(const Engine& engine, const Options& o) {
  for (const Question* q :
       selected_questions(engine.questions(), o.question_id)) {
    QuestionResult r = engine.analyze(*q);
    for (std::size_t j : selected_choices(r, o.choice)) {
      const auto& p = r.pairs[j];
      std::cout << "pair " << q->id << ' ' << j << ": " << p.choice_text
                << '\n';
      std::cout << "  question nodes:";
      for (const auto& k : p.sg.question_nodes) std::cout << ' ' << k;
      std::cout << "\n  choice nodes:";
      for (const auto& k : p.sg.choice_nodes) std::cout << ' ' << k;
      std::cout << "\n  nodes (" << p.sg.nodes.size() << "):";
      for (const auto& k : p.sg.nodes) std::cout << ' ' << k;
      std::cout << '\n';
      if (p.sg.merged_fact_ids.empty()) {
        std::cout << "  merged facts: none (the graph is the hypothesis "
                     "alone)\n";
      } else {
        std::cout << "  merged facts (" << p.sg.merged_fact_ids.size()
                  << "):";
        for (const auto& id : p.sg.merged_fact_ids) std::cout << ' ' << id;
        std::cout << '\n';
      }
      std::cout << "  edges (" << p.sg.edges.size() << "):\n";
      for (const auto& e : p.sg.edges)
        std::cout << "    " << e.a << " -- " << e.b << " [" << e.origin
                  << "]\n";
    }
  }
}

void run_paths(const Engine& engine, const Options& o) {
  for (const Question* q :
       selected_questions(engine.questions(), o.question_id)) {
    QuestionResult r = engine.analyze(*q);
    if (!o.out_dir.empty()) {
      for (const auto& file :
           amrsg::pipeline::write_reports(r, o.out_dir, false))
        std::cout << file.string() << '\n';
      continue;
    }
    for (std::size_t j : selected_choices(r, o.choice))
      std::cout << amrsg::pipeline::pair_report(*q, r.pairs[j], false).dump(2)
                << '\n';
  }
}

void run_select_facts(const Engine& engine, const Options& o) {
  for (const Question* q :
       selected_questions(engine.questions(), o.question_id)) {
    QuestionResult r = engine.analyze(*q);
    for (std::size_t j : selected_choices(r, o.choice)) {
      if (r.pairs[j].active.empty()) {
        std::cout << q->id << '\t' << j << "\t(none)\n";
        continue;
      }
      for (const auto& a : r.pairs[j].active)
        std::cout << q->id << '\t' << j << '\t' << a.id << "\tpaths="
                  << a.path_count << "\tscore=" << a.retrieval_score << '\n';
    }
  }
}

void run_score(const Engine& engine, const Options& o) {
  auto params = amrsg::pipeline::params_for(engine.config(), o.params_path);
  for (const Question* q :
       selected_questions(engine.questions(), o.question_id)) {
    QuestionResult r = engine.process(*q, params);
    if (!o.out_dir.empty()) amrsg::pipeline::write_reports(r, o.out_dir, true);
    std::cout << amrsg::pipeline::summary_line(r) << '\n';
  }
}

void run_eval(const Engine& engine, const Options& o) {
  auto params = amrsg::pipeline::params_for(engine.config(), o.params_path);
  auto result = amrsg::pipeline::evaluate(engine, params);
  std::string tsv = amrsg::pipeline::eval_tsv(result);
  if (o.tsv_out.empty()) {
    std::cout << tsv;
  } else {
    std::ofstream out(o.tsv_out, std::ios::binary);
    if (!out) throw amrsg::InputError("cannot write '" + o.tsv_out + "'");
    out << tsv;
  }
  std::cout << "accuracy\t"
            << amrsg::pipeline::ordered_json(result.accuracy).dump() << '\n';
}

void run_gradcheck(const Options& o) {
  const PipelineConfig& cfg = o.cfg;
  double worst = 0.0;
  for (std::size_t t = 0; t < o.trials; ++t) {
    std::uint64_t seed = cfg.seed + t;
    auto dataset = amrsg::reasoner::make_toy_dataset(1, 4, 2, cfg.dim, seed);
    auto params = amrsg::reasoner::ReasonerParams::init(cfg.layers, cfg.heads,
                                                        cfg.dim, seed);
    double err = amrsg::reasoner::backward_and_gradcheck(dataset[0], params,
                                                         o.epsilon);
    worst = std::max(worst, err);
    std::cout << "trial " << t << "\tseed " << seed << "\tmax_rel_err " << err
              << '\n';
  }
  std::cout << "worst\t" << worst << '\n';
}

void run_inspect(const Engine& engine, const Options& o) {
  QuestionResult r = engine.analyze(engine.question(o.question_id));
  std::cout << amrsg::pipeline::inspect_text(
      r, static_cast<std::size_t>(o.choice));
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Answer multiple-choice science questions by reasoning over "
               "AMR semantic graphs"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key=value file; flags override it");

  app.add_option("--core-corpus", o.cfg.core_corpus, "Curated fact file");
  app.add_option("--common-corpus", o.cfg.common_corpus, "Open fact file");
  app.add_option("--amr-bank", o.cfg.amr_bank,
                 "AMR bank with hypothesis and fact graphs");
  app.add_option("--questions", o.cfg.questions, "JSONL question file");
  app.add_option("--pool-size", o.cfg.pool_size, "Retrieved pool size");
  app.add_option("--n-core", o.cfg.n_core, "Pool slots for the curated file");
  app.add_option("--n-common", o.cfg.n_common, "Pool slots for the open file");
  app.add_option("--active-cap", o.cfg.active_cap,
                 "Most facts kept after path ranking");
  app.add_option("--max-path-nodes", o.cfg.max_path_nodes,
                 "Longest evidence path, in nodes");
  app.add_option("--k-layers", o.cfg.layers, "Message-passing rounds");
  app.add_option("--heads", o.cfg.heads, "Attention-style heads per round");
  app.add_option("--dim", o.cfg.dim, "Node feature width");
  app.add_option("--seed", o.cfg.seed, "Seed for embeddings and parameters");
  app.add_option("--query-source", o.query_source,
                 "Retrieval query text: per-choice hypothesis or raw question")
      ->check(CLI::IsMember({"hypothesis", "question"}));

  auto* cmd_index =
      app.add_subcommand("index", "Build and summarize the BM25 indexes");
  auto* cmd_hyp = app.add_subcommand(
      "hypothesize", "Print the per-choice hypothesis statements");
  auto* cmd_retrieve =
      app.add_subcommand("retrieve", "Print the fact pool per pair");
  auto* cmd_build =
      app.add_subcommand("build-sg", "Print the merged semantic graph");
  auto* cmd_paths = app.add_subcommand(
      "paths", "Emit the per-pair JSON evidence report");
  auto* cmd_select = app.add_subcommand(
      "select-facts", "Print the path-ranked active facts");
  auto* cmd_score =
      app.add_subcommand("score", "Score every choice and pick one");
  auto* cmd_eval = app.add_subcommand(
      "eval", "Score a labelled set and report accuracy");
  auto* cmd_grad = app.add_subcommand(
      "gradcheck", "Compare analytic gradients with finite differences");
  auto* cmd_inspect = app.add_subcommand(
      "inspect", "Print a readable report for one question-choice pair");

  for (CLI::App* sub : {cmd_index, cmd_hyp, cmd_retrieve, cmd_build,
                        cmd_paths, cmd_select, cmd_score, cmd_eval, cmd_grad,
                        cmd_inspect})
    sub->fallthrough();

  for (CLI::App* sub :
       {cmd_hyp, cmd_retrieve, cmd_build, cmd_paths, cmd_select, cmd_score})
    sub->add_option("--question-id", o.question_id,
                    "Restrict to one question");
  for (CLI::App* sub : {cmd_retrieve, cmd_build, cmd_paths, cmd_select})
    sub->add_option("--choice", o.choice, "Restrict to one choice")
        ->check(CLI::NonNegativeNumber);
  cmd_inspect
      ->add_option("--question-id", o.question_id, "Question to inspect")
      ->required();
  cmd_inspect->add_option("--choice", o.choice, "Choice to inspect")
      ->check(CLI::NonNegativeNumber)
      ->required();
  for (CLI::App* sub : {cmd_paths, cmd_score})
    sub->add_option("--out-dir", o.out_dir, "Write JSON reports here");
  for (CLI::App* sub : {cmd_score, cmd_eval})
    sub->add_option("--params", o.params_path,
                    "Saved parameter file (fresh seeded draw when absent)");
  cmd_eval->add_option("--tsv-out", o.tsv_out,
                       "Write the per-question breakdown here");
  cmd_grad->add_option("--epsilon", o.epsilon, "Central-difference step");
  cmd_grad->add_option("--trials", o.trials, "Seeded instances to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    o.cfg.query_from_question = o.query_source == "question";
    if (*cmd_index) {
      run_index(o);
    } else if (*cmd_hyp) {
      run_hypothesize(o);
    } else if (*cmd_retrieve) {
      o.cfg.validate();
      run_retrieve(o);
    } else if (*cmd_grad) {
      o.cfg.validate();
      run_gradcheck(o);
    } else {
      Engine engine(o.cfg);
      if (*cmd_build) run_build_sg(engine, o);
      if (*cmd_paths) run_paths(engine, o);
      if (*cmd_select) run_select_facts(engine, o);
      if (*cmd_score) run_score(engine, o);
      if (*cmd_eval) run_eval(engine, o);
      if (*cmd_inspect) run_inspect(engine, o);
    }
    return 0;
  } catch (const amrsg::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
