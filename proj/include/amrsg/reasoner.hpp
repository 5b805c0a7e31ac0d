#pragma once

// Scores question-choice pairs over the fact connection graph:
//
//   node features  = max-pooled token embeddings per node text,
//   message passing = K layers of a multi-head GCN over the symmetric-
//                     normalized adjacency, heads concatenated per layer,
//   fusion          = a sigmoid gate blends the graph's hypothesis row with
//                     the pair's pooled encoding, a linear map reduces the
//                     blend to one scalar score per choice,
//   decision        = softmax across the J choices.
//
// The backward pass is exact (hand-derived), verified against central
// finite differences, and drives a small full-batch trainer. Everything is
// double precision and deterministic under fixed seeds.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "amrsg/common.hpp"

namespace amrsg::reasoner {

struct EmptyText : InputError {
  using InputError::InputError;
};

struct ShapeMismatch : InputError {
  using InputError::InputError;
};

struct BadParamsFile : InputError {
  using InputError::InputError;
};

struct AsymmetricInput : InternalError {
  using InternalError::InternalError;
};

struct ZeroDegree : InternalError {
  using InternalError::InternalError;
};

struct NonFiniteLoss : InternalError {
  using InternalError::InternalError;
};

struct DivergedLoss : InternalError {
  using InternalError::InternalError;
};

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  // One row per token, dim() columns. Deterministic per text.
  virtual Eigen::MatrixXd embed(const std::string& text) const = 0;
  // Sequence-level vector for the concatenation of texts.
  virtual Eigen::VectorXd cls(const std::vector<std::string>& texts) const = 0;
};

// Dependency-free stand-in for a pretrained encoder: every token owns a
// fixed vector drawn from a hash-seeded generator, uniform in [-1, 1], and
// cls() max-pools over all tokens of the concatenated texts.
class HashedEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashedEmbeddingProvider(std::size_t dim, std::uint64_t seed = 0)
      : dim_(dim), seed_(seed) {}

  std::size_t dim() const override { return dim_; }

  Eigen::VectorXd token_vector(const std::string& token) const {
    SplitMix64 rng(fnv1a64(token) ^ seed_);
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
    return v;
  }

  Eigen::MatrixXd embed(const std::string& text) const override {
    std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw EmptyText("text has no tokens: \"" + text + "\"");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(tokens.size()),
                      static_cast<Eigen::Index>(dim_));
    for (std::size_t t = 0; t < tokens.size(); ++t)
      m.row(static_cast<Eigen::Index>(t)) = token_vector(tokens[t]).transpose();
    return m;
  }

  Eigen::VectorXd cls(const std::vector<std::string>& texts) const override {
    std::string joined;
    for (const std::string& text : texts) {
      if (!joined.empty()) joined += " ";
      joined += text;
    }
    return embed(joined).colwise().maxCoeff().transpose();
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Types

// Row 0 is the hypothesis, row i >= 1 the i-th active fact.
struct NodeFeatures {
  Eigen::MatrixXd X0;
};

struct ReasonerParams {
  std::size_t layers = 0;  // K
  std::size_t heads = 0;   // h
  std::size_t dim = 0;     // d; d % h == 0
  std::vector<std::vector<Eigen::MatrixXd>> W;  // [K][h], each d x (d/h)
  Eigen::VectorXd W_lambda;                     // length 2d (a 1 x 2d map)
  double b_lambda = 0.0;
  Eigen::MatrixXd W_o;  // d x d
  Eigen::VectorXd b_o;  // length d

  static ReasonerParams zeros(std::size_t layers, std::size_t heads,
                              std::size_t dim) {
    if (layers < 1 || heads < 1 || dim < 1 || dim % heads != 0)
      throw ShapeMismatch("need layers >= 1, heads >= 1, dim divisible by "
                          "heads");
    ReasonerParams p;
    p.layers = layers;
    p.heads = heads;
    p.dim = dim;
    Eigen::Index d = static_cast<Eigen::Index>(dim);
    Eigen::Index dh = static_cast<Eigen::Index>(dim / heads);
    p.W.assign(layers,
               std::vector<Eigen::MatrixXd>(heads, Eigen::MatrixXd::Zero(d, dh)));
    p.W_lambda = Eigen::VectorXd::Zero(2 * d);
    p.W_o = Eigen::MatrixXd::Zero(d, d);
    p.b_o = Eigen::VectorXd::Zero(d);
    return p;
  }

  // Uniform in [-1/sqrt(d), 1/sqrt(d)], drawn in declaration order so a
  // seed fully determines the parameter point.
  static ReasonerParams init(std::size_t layers, std::size_t heads,
                             std::size_t dim, std::uint64_t seed) {
    ReasonerParams p = zeros(layers, heads, dim);
    SplitMix64 rng(seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    auto draw = [&] { return rng.uniform(-scale, scale); };
    for (auto& layer : p.W)
      for (Eigen::MatrixXd& w : layer)
        for (Eigen::Index r = 0; r < w.rows(); ++r)
          for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = draw();
    for (Eigen::Index i = 0; i < p.W_lambda.size(); ++i) p.W_lambda[i] = draw();
    p.b_lambda = draw();
    for (Eigen::Index r = 0; r < p.W_o.rows(); ++r)
      for (Eigen::Index c = 0; c < p.W_o.cols(); ++c) p.W_o(r, c) = draw();
    for (Eigen::Index i = 0; i < p.b_o.size(); ++i) p.b_o[i] = draw();
    return p;
  }
};

// One question-choice pair ready for scoring.
struct ChoiceInstance {
  NodeFeatures features;
  Eigen::MatrixXd norm_adjacency;  // symmetric-normalized, same node count
  Eigen::VectorXd x_cls;
};

struct QuestionInstance {
  std::vector<ChoiceInstance> choices;
  std::size_t answer = 0;
};

struct ChoiceScores {
  Eigen::VectorXd raw;
  Eigen::VectorXd probs;
};

// ---------------------------------------------------------------------------
// Forward

inline NodeFeatures pool_node_features(const EmbeddingProvider& provider,
                                       const std::string& hypothesis_text,
                                       const std::vector<std::string>& fact_texts) {
  Eigen::Index d = static_cast<Eigen::Index>(provider.dim());
  NodeFeatures f;
  f.X0.resize(static_cast<Eigen::Index>(fact_texts.size()) + 1, d);
  f.X0.row(0) = provider.embed(hypothesis_text).colwise().maxCoeff();
  for (std::size_t i = 0; i < fact_texts.size(); ++i)
    f.X0.row(static_cast<Eigen::Index>(i) + 1) =
        provider.embed(fact_texts[i]).colwise().maxCoeff();
  return f;
}

// Lambda = D^{-1/2} A D^{-1/2} for a symmetric 0/1 adjacency with unit
// diagonal (so every degree is >= 1).
inline Eigen::MatrixXd normalize_adjacency(
    const std::vector<std::vector<int>>& A) {
  std::size_t n = A.size();
  for (const auto& row : A)
    if (row.size() != n)
      throw AsymmetricInput("adjacency matrix is not square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (A[i][j] != 0 && A[i][j] != 1)
        throw AsymmetricInput("adjacency entries must be 0 or 1");
      if (A[i][j] != A[j][i])
        throw AsymmetricInput("adjacency matrix is not symmetric");
    }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    int degree = 0;
    for (std::size_t j = 0; j < n; ++j) degree += A[i][j];
    if (degree == 0)
      throw ZeroDegree("node " + std::to_string(i) + " has degree 0");
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(degree));
  }
  Eigen::MatrixXd L(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          A[i][j] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return L;
}

// Intermediates the backward pass needs: per layer, the layer input, the
// propagated input (Lambda * X), and each head's pre-activation.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> propagated;
  std::vector<std::vector<Eigen::MatrixXd>> pre;
};

inline Eigen::MatrixXd gcn_forward(const NodeFeatures& features,
                                   const Eigen::MatrixXd& norm_adjacency,
                                   const ReasonerParams& p,
                                   ForwardTrace* trace = nullptr) {
  Eigen::Index d = static_cast<Eigen::Index>(p.dim);
  Eigen::Index dh = static_cast<Eigen::Index>(p.dim / p.heads);
  Eigen::Index rows = features.X0.rows();
  if (features.X0.cols() != d)
    throw ShapeMismatch("feature width does not match parameter dim");
  if (norm_adjacency.rows() != rows || norm_adjacency.cols() != rows)
    throw ShapeMismatch("adjacency size does not match node count");

  if (trace) {
    trace->inputs.clear();
    trace->propagated.clear();
    trace->pre.assign(p.layers, std::vector<Eigen::MatrixXd>(p.heads));
  }
  Eigen::MatrixXd X = features.X0;
  for (std::size_t k = 0; k < p.layers; ++k) {
    Eigen::MatrixXd propagated = norm_adjacency * X;
    Eigen::MatrixXd next(rows, d);
    for (std::size_t i = 0; i < p.heads; ++i) {
      Eigen::MatrixXd pre = propagated * p.W[k][i];
      next.block(0, static_cast<Eigen::Index>(i) * dh, rows, dh) =
          pre.cwiseMax(0.0);
      if (trace) trace->pre[k][i] = std::move(pre);
    }
    if (trace) {
      trace->inputs.push_back(std::move(X));
      trace->propagated.push_back(std::move(propagated));
    }
    X = std::move(next);
  }
  return X;
}

struct GateResult {
  double lambda = 0.0;
  Eigen::VectorXd blended;  // lambda * x_graph + (1 - lambda) * x_cls
  double score = 0.0;
};

inline GateResult gate_parts(const Eigen::VectorXd& x_cls,
                             const Eigen::VectorXd& x_graph,
                             const ReasonerParams& p) {
  Eigen::Index d = static_cast<Eigen::Index>(p.dim);
  if (x_cls.size() != d || x_graph.size() != d)
    throw ShapeMismatch("gate inputs must have length dim");
  double a = p.W_lambda.head(d).dot(x_cls) + p.W_lambda.tail(d).dot(x_graph) +
             p.b_lambda;
  GateResult r;
  r.lambda = 1.0 / (1.0 + std::exp(-a));
  r.blended = r.lambda * x_graph + (1.0 - r.lambda) * x_cls;
  r.score = (p.W_o * r.blended + p.b_o).sum();
  return r;
}

inline double gate_and_score(const Eigen::VectorXd& x_cls,
                             const Eigen::VectorXd& x_graph,
                             const ReasonerParams& p) {
  return gate_parts(x_cls, x_graph, p).score;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  Eigen::ArrayXd shifted = v.array() - v.maxCoeff();
  Eigen::ArrayXd e = shifted.exp();
  return (e / e.sum()).matrix();
}

inline ChoiceScores score_choices(const std::vector<ChoiceInstance>& choices,
                                  const ReasonerParams& p) {
  Eigen::VectorXd raw(static_cast<Eigen::Index>(choices.size()));
  for (std::size_t j = 0; j < choices.size(); ++j) {
    const ChoiceInstance& inst = choices[j];
    Eigen::MatrixXd XK = gcn_forward(inst.features, inst.norm_adjacency, p);
    raw[static_cast<Eigen::Index>(j)] =
        gate_and_score(inst.x_cls, XK.row(0).transpose(), p);
  }
  return {raw, softmax(raw)};
}

// ---------------------------------------------------------------------------
// Backward

struct ParamGradients {
  std::vector<std::vector<Eigen::MatrixXd>> W;
  Eigen::VectorXd W_lambda;
  double b_lambda = 0.0;
  Eigen::MatrixXd W_o;
  Eigen::VectorXd b_o;

  static ParamGradients zeros_like(const ReasonerParams& p) {
    ReasonerParams z = ReasonerParams::zeros(p.layers, p.heads, p.dim);
    return {std::move(z.W), std::move(z.W_lambda), 0.0, std::move(z.W_o),
            std::move(z.b_o)};
  }

  ParamGradients& operator+=(const ParamGradients& o) {
    for (std::size_t k = 0; k < W.size(); ++k)
      for (std::size_t i = 0; i < W[k].size(); ++i) W[k][i] += o.W[k][i];
    W_lambda += o.W_lambda;
    b_lambda += o.b_lambda;
    W_o += o.W_o;
    b_o += o.b_o;
    return *this;
  }

  ParamGradients& operator*=(double s) {
    for (auto& layer : W)
      for (Eigen::MatrixXd& w : layer) w *= s;
    W_lambda *= s;
    b_lambda *= s;
    W_o *= s;
    b_o *= s;
    return *this;
  }
};

struct BackwardResult {
  double loss = 0.0;
  ParamGradients grads;
};

namespace detail {

inline double loss_from_probs(const Eigen::VectorXd& probs,
                              std::size_t answer) {
  return -std::log(probs[static_cast<Eigen::Index>(answer)]);
}

}  // namespace detail

inline double question_loss(const QuestionInstance& q,
                            const ReasonerParams& p) {
  if (q.answer >= q.choices.size())
    throw InternalError("answer index out of range");
  double loss =
      detail::loss_from_probs(score_choices(q.choices, p).probs, q.answer);
  if (!std::isfinite(loss)) throw NonFiniteLoss("loss is not finite");
  return loss;
}

// Exact gradients of the cross-entropy loss for one question. Derivation,
// with g_j = probs_j - [j = answer] and u = column sums of W_o:
//   score_j = sum(W_o z_j + b_o),  z_j = lam*xg + (1-lam)*xc
//   dW_o    += g_j * ones * z_j^T          db_o     += g_j * ones
//   dz      = g_j * u                      dlam     = dz . (xg - xc)
//   da      = dlam * lam * (1 - lam)       dW_lam   += da * [xc ; xg]
//   dxg     = lam * dz + da * W_lam[d:2d]
// then through each GCN layer (P = pre-activation, M = Lambda * X):
//   dP_i    = dHead_i  masked by P_i > 0
//   dW_i    += M^T dP_i                    dX_prev  += Lambda^T dP_i W_i^T
inline BackwardResult backward(const QuestionInstance& q,
                               const ReasonerParams& p) {
  if (q.answer >= q.choices.size())
    throw InternalError("answer index out of range");
  std::size_t J = q.choices.size();
  Eigen::Index d = static_cast<Eigen::Index>(p.dim);
  Eigen::Index dh = static_cast<Eigen::Index>(p.dim / p.heads);

  std::vector<ForwardTrace> traces(J);
  std::vector<Eigen::VectorXd> x_graph(J);
  std::vector<GateResult> gates(J);
  Eigen::VectorXd raw(static_cast<Eigen::Index>(J));
  for (std::size_t j = 0; j < J; ++j) {
    const ChoiceInstance& inst = q.choices[j];
    Eigen::MatrixXd XK =
        gcn_forward(inst.features, inst.norm_adjacency, p, &traces[j]);
    x_graph[j] = XK.row(0).transpose();
    gates[j] = gate_parts(inst.x_cls, x_graph[j], p);
    raw[static_cast<Eigen::Index>(j)] = gates[j].score;
  }
  Eigen::VectorXd probs = softmax(raw);

  BackwardResult out;
  out.loss = detail::loss_from_probs(probs, q.answer);
  out.grads = ParamGradients::zeros_like(p);

  Eigen::VectorXd u = p.W_o.colwise().sum().transpose();
  for (std::size_t j = 0; j < J; ++j) {
    double g = probs[static_cast<Eigen::Index>(j)] -
               (j == q.answer ? 1.0 : 0.0);
    const ChoiceInstance& inst = q.choices[j];
    const GateResult& gate = gates[j];

    out.grads.W_o.rowwise() += g * gate.blended.transpose();
    out.grads.b_o.array() += g;

    Eigen::VectorXd dz = g * u;
    double dlambda = dz.dot(x_graph[j] - inst.x_cls);
    double da = dlambda * gate.lambda * (1.0 - gate.lambda);
    out.grads.W_lambda.head(d) += da * inst.x_cls;
    out.grads.W_lambda.tail(d) += da * x_graph[j];
    out.grads.b_lambda += da;

    Eigen::VectorXd dxg = gate.lambda * dz + da * p.W_lambda.tail(d);
    Eigen::MatrixXd dX =
        Eigen::MatrixXd::Zero(inst.features.X0.rows(), d);
    dX.row(0) = dxg.transpose();
    for (std::size_t k = p.layers; k-- > 0;) {
      const ForwardTrace& trace = traces[j];
      Eigen::MatrixXd dXprev =
          Eigen::MatrixXd::Zero(inst.features.X0.rows(), d);
      for (std::size_t i = 0; i < p.heads; ++i) {
        Eigen::MatrixXd dP =
            (trace.pre[k][i].array() > 0.0)
                .select(dX.block(0, static_cast<Eigen::Index>(i) * dh,
                                 dX.rows(), dh),
                        0.0);
        out.grads.W[k][i] += trace.propagated[k].transpose() * dP;
        dXprev += inst.norm_adjacency.transpose() * dP * p.W[k][i].transpose();
      }
      dX = std::move(dXprev);
    }
  }
  return out;
}

namespace detail {

// Every parameter scalar, in serialization order.
inline std::vector<double*> param_pointers(ReasonerParams& p) {
  std::vector<double*> out;
  for (auto& layer : p.W)
    for (Eigen::MatrixXd& w : layer)
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(&w(r, c));
  for (Eigen::Index i = 0; i < p.W_lambda.size(); ++i)
    out.push_back(&p.W_lambda[i]);
  out.push_back(&p.b_lambda);
  for (Eigen::Index r = 0; r < p.W_o.rows(); ++r)
    for (Eigen::Index c = 0; c < p.W_o.cols(); ++c) out.push_back(&p.W_o(r, c));
  for (Eigen::Index i = 0; i < p.b_o.size(); ++i) out.push_back(&p.b_o[i]);
  return out;
}

inline std::vector<double*> gradient_pointers(ParamGradients& g) {
  std::vector<double*> out;
  for (auto& layer : g.W)
    for (Eigen::MatrixXd& w : layer)
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(&w(r, c));
  for (Eigen::Index i = 0; i < g.W_lambda.size(); ++i)
    out.push_back(&g.W_lambda[i]);
  out.push_back(&g.b_lambda);
  for (Eigen::Index r = 0; r < g.W_o.rows(); ++r)
    for (Eigen::Index c = 0; c < g.W_o.cols(); ++c) out.push_back(&g.W_o(r, c));
  for (Eigen::Index i = 0; i < g.b_o.size(); ++i) out.push_back(&g.b_o[i]);
  return out;
}

inline double min_abs_preactivation(const QuestionInstance& q,
                                    const ReasonerParams& p) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const ChoiceInstance& inst : q.choices) {
    ForwardTrace trace;
    gcn_forward(inst.features, inst.norm_adjacency, p, &trace);
    for (const auto& layer : trace.pre)
      for (const Eigen::MatrixXd& pre : layer)
        if (pre.size() > 0)
          lowest = std::min(lowest, pre.array().abs().minCoeff());
  }
  return lowest;
}

// The finite-difference side of the gradient check runs in extended
// precision. Some parameters (the output bias shifts every choice's raw
// score equally, which softmax ignores) have a true gradient of zero, and a
// double-precision difference quotient of a constant loss is nothing but
// rounding noise above the comparison tolerance. The inputs are exact when
// widened, so both sides still evaluate the same parameter point.
using MatXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VecXld = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

struct LdChoice {
  MatXld X0;
  MatXld L;
  VecXld x_cls;
};

struct LdParams {
  std::vector<std::vector<MatXld>> W;
  VecXld W_lambda;
  long double b_lambda = 0.0L;
  MatXld W_o;
  VecXld b_o;
};

inline LdParams widen(const ReasonerParams& p) {
  LdParams out;
  out.W.resize(p.W.size());
  for (std::size_t k = 0; k < p.W.size(); ++k)
    for (const Eigen::MatrixXd& w : p.W[k])
      out.W[k].push_back(w.cast<long double>());
  out.W_lambda = p.W_lambda.cast<long double>();
  out.b_lambda = p.b_lambda;
  out.W_o = p.W_o.cast<long double>();
  out.b_o = p.b_o.cast<long double>();
  return out;
}

inline std::vector<long double*> param_pointers(LdParams& p) {
  std::vector<long double*> out;
  for (auto& layer : p.W)
    for (MatXld& w : layer)
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(&w(r, c));
  for (Eigen::Index i = 0; i < p.W_lambda.size(); ++i)
    out.push_back(&p.W_lambda[i]);
  out.push_back(&p.b_lambda);
  for (Eigen::Index r = 0; r < p.W_o.rows(); ++r)
    for (Eigen::Index c = 0; c < p.W_o.cols(); ++c) out.push_back(&p.W_o(r, c));
  for (Eigen::Index i = 0; i < p.b_o.size(); ++i) out.push_back(&p.b_o[i]);
  return out;
}

inline long double ld_question_loss(const std::vector<LdChoice>& choices,
                                    std::size_t answer, const LdParams& p,
                                    std::size_t layers, std::size_t heads) {
  Eigen::Index d = p.W_o.rows();
  Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  VecXld raw(static_cast<Eigen::Index>(choices.size()));
  for (std::size_t j = 0; j < choices.size(); ++j) {
    MatXld X = choices[j].X0;
    for (std::size_t k = 0; k < layers; ++k) {
      MatXld propagated = choices[j].L * X;
      MatXld next(X.rows(), d);
      for (std::size_t i = 0; i < heads; ++i)
        next.block(0, static_cast<Eigen::Index>(i) * dh, X.rows(), dh) =
            (propagated * p.W[k][i]).cwiseMax(static_cast<long double>(0));
      X = std::move(next);
    }
    VecXld xg = X.row(0).transpose();
    long double a = p.W_lambda.head(d).dot(choices[j].x_cls) +
                    p.W_lambda.tail(d).dot(xg) + p.b_lambda;
    long double lambda = 1.0L / (1.0L + std::exp(-a));
    VecXld z = lambda * xg + (1.0L - lambda) * choices[j].x_cls;
    raw[static_cast<Eigen::Index>(j)] = (p.W_o * z + p.b_o).sum();
  }
  long double peak = raw.maxCoeff();
  long double total = 0.0L;
  for (Eigen::Index j = 0; j < raw.size(); ++j)
    total += std::exp(raw[j] - peak);
  return -(raw[static_cast<Eigen::Index>(answer)] - peak) + std::log(total);
}

}  // namespace detail

// Compares the analytic gradient of every parameter against central finite
// differences and returns the worst relative error. Evaluates at a point
// where all ReLU pre-activations are at least 10*epsilon from zero,
// re-drawing the parameters when they are not, so the difference quotient
// never straddles a kink.
inline double backward_and_gradcheck(const QuestionInstance& q,
                                     ReasonerParams params, double epsilon,
                                     std::uint64_t resample_seed = 0x9e3779b9) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-4))
    throw InternalError("gradcheck epsilon out of [1e-7, 1e-4]");
  for (int attempt = 0;
       detail::min_abs_preactivation(q, params) < 10.0 * epsilon; ++attempt) {
    if (attempt >= 100)
      throw InternalError("could not find a kink-free parameter point");
    params = ReasonerParams::init(params.layers, params.heads, params.dim,
                                  resample_seed + static_cast<std::uint64_t>(attempt));
  }

  BackwardResult analytic = backward(q, params);
  if (!std::isfinite(analytic.loss)) throw NonFiniteLoss("loss is not finite");

  std::vector<detail::LdChoice> choices;
  for (const ChoiceInstance& inst : q.choices)
    choices.push_back({inst.features.X0.cast<long double>(),
                       inst.norm_adjacency.cast<long double>(),
                       inst.x_cls.cast<long double>()});
  detail::LdParams wide = detail::widen(params);
  std::vector<long double*> theta = detail::param_pointers(wide);
  std::vector<double*> grad = detail::gradient_pointers(analytic.grads);
  long double step = static_cast<long double>(epsilon);

  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    long double saved = *theta[i];
    *theta[i] = saved + step;
    long double up = detail::ld_question_loss(choices, q.answer, wide,
                                              params.layers, params.heads);
    *theta[i] = saved - step;
    long double down = detail::ld_question_loss(choices, q.answer, wide,
                                                params.layers, params.heads);
    *theta[i] = saved;
    if (!std::isfinite(static_cast<double>(up)) ||
        !std::isfinite(static_cast<double>(down)))
      throw NonFiniteLoss("perturbed loss is not finite");
    double numeric = static_cast<double>((up - down) / (2.0L * step));
    double a = *grad[i];
    double err = std::abs(a - numeric) /
                 std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Toy training

struct TrainConfig {
  std::size_t layers = 2;
  std::size_t heads = 16;
  std::size_t dim = 64;
  double lr = 0.05;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
};

struct TrainResult {
  ReasonerParams params;
  std::vector<double> accuracy_curve;  // entry e = accuracy after e updates
};

inline double dataset_accuracy(const std::vector<QuestionInstance>& dataset,
                               const ReasonerParams& p) {
  std::size_t correct = 0;
  for (const QuestionInstance& q : dataset) {
    Eigen::VectorXd probs = score_choices(q.choices, p).probs;
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    if (static_cast<std::size_t>(best) == q.answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

inline TrainResult train_toy(const std::vector<QuestionInstance>& dataset,
                             const TrainConfig& cfg) {
  if (dataset.empty()) throw InternalError("empty training dataset");
  TrainResult result;
  result.params =
      ReasonerParams::init(cfg.layers, cfg.heads, cfg.dim, cfg.seed);
  result.accuracy_curve.push_back(dataset_accuracy(dataset, result.params));
  double inv_n = 1.0 / static_cast<double>(dataset.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ParamGradients total = ParamGradients::zeros_like(result.params);
    for (const QuestionInstance& q : dataset) {
      BackwardResult back = backward(q, result.params);
      if (!std::isfinite(back.loss))
        throw DivergedLoss("loss diverged at epoch " + std::to_string(epoch));
      total += back.grads;
    }
    total *= cfg.lr * inv_n;
    std::vector<double*> theta = detail::param_pointers(result.params);
    std::vector<double*> step = detail::gradient_pointers(total);
    for (std::size_t i = 0; i < theta.size(); ++i) *theta[i] -= *step[i];
    result.accuracy_curve.push_back(dataset_accuracy(dataset, result.params));
  }
  return result;
}

// Linearly separable synthetic questions: the correct choice's features sit
// along +direction, the others along -direction, with small noise.
inline std::vector<QuestionInstance> make_toy_dataset(
    std::size_t count, std::size_t num_choices, std::size_t num_facts,
    std::size_t dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::Index d = static_cast<Eigen::Index>(dim);
  Eigen::VectorXd direction(d);
  for (Eigen::Index i = 0; i < d; ++i)
    direction[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;

  std::vector<std::vector<int>> A(num_facts + 1,
                                  std::vector<int>(num_facts + 1, 1));
  Eigen::MatrixXd L = normalize_adjacency(A);

  std::vector<QuestionInstance> dataset;
  for (std::size_t n = 0; n < count; ++n) {
    QuestionInstance q;
    q.answer = rng.below(num_choices);
    for (std::size_t j = 0; j < num_choices; ++j) {
      double sign = (j == q.answer) ? 1.0 : -1.0;
      ChoiceInstance inst;
      inst.norm_adjacency = L;
      inst.features.X0.resize(static_cast<Eigen::Index>(num_facts) + 1, d);
      for (Eigen::Index r = 0; r < inst.features.X0.rows(); ++r)
        for (Eigen::Index c = 0; c < d; ++c)
          inst.features.X0(r, c) =
              sign * direction[c] + rng.uniform(-0.1, 0.1);
      inst.x_cls.resize(d);
      for (Eigen::Index c = 0; c < d; ++c)
        inst.x_cls[c] = sign * direction[c] + rng.uniform(-0.1, 0.1);
      q.choices.push_back(std::move(inst));
    }
    dataset.push_back(std::move(q));
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Parameter file format: "AMRSG1", then K, h, d as little-endian uint32,
// then every matrix row-major as little-endian binary64, in declaration
// order (W by layer then head, W_lambda, b_lambda, W_o, b_o).

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i]))
         << (8 * i);
  return v;
}

inline double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i]))
            << (8 * i);
  return std::bit_cast<double>(bits);
}

constexpr char kParamsMagic[] = "AMRSG1";

inline std::size_t param_count(std::size_t layers, std::size_t heads,
                               std::size_t dim) {
  return layers * heads * dim * (dim / heads) + 2 * dim + 1 + dim * dim + dim;
}

}  // namespace detail

inline void save_params(const std::string& path, const ReasonerParams& p) {
  std::string out(detail::kParamsMagic, 6);
  detail::put_u32(out, static_cast<std::uint32_t>(p.layers));
  detail::put_u32(out, static_cast<std::uint32_t>(p.heads));
  detail::put_u32(out, static_cast<std::uint32_t>(p.dim));
  ReasonerParams copy = p;
  for (double* value : detail::param_pointers(copy))
    detail::put_f64(out, *value);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw InputError("cannot write params file: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw InputError("failed writing params file: " + path);
}

inline ReasonerParams load_params(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw InputError("cannot read params file: " + path);
  std::string in((std::istreambuf_iterator<char>(file)),
                 std::istreambuf_iterator<char>());
  if (in.size() < 18 || in.compare(0, 6, detail::kParamsMagic, 6) != 0)
    throw BadParamsFile(path + ": bad magic");
  std::uint32_t layers = detail::get_u32(in, 6);
  std::uint32_t heads = detail::get_u32(in, 10);
  std::uint32_t dim = detail::get_u32(in, 14);
  if (layers < 1 || heads < 1 || dim < 1 || dim % heads != 0)
    throw BadParamsFile(path + ": bad header dimensions");
  std::size_t expect = 18 + 8 * detail::param_count(layers, heads, dim);
  if (in.size() != expect)
    throw BadParamsFile(path + ": expected " + std::to_string(expect) +
                        " bytes, got " + std::to_string(in.size()));
  ReasonerParams p = ReasonerParams::zeros(layers, heads, dim);
  std::size_t at = 18;
  for (double* value : detail::param_pointers(p)) {
    *value = detail::get_f64(in, at);
    at += 8;
    if (!std::isfinite(*value))
      throw BadParamsFile(path + ": non-finite parameter value");
  }
  return p;
}

}  // namespace amrsg::reasoner
