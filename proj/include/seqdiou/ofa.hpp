#pragma once

// Object-aware feature aggregation over a set of proposal features.
//
// Pair-wise aggregation of rows F (N x m) with projections phi, psi (m x p):
//   delta_i = softmax(phi(f_i) psi(F)^T / sqrt(p)),  A(f_i, F) = ReLU(f_i + delta_i F)
// Semantic path: gate = softmax(T(G(F^s))) over channels, with
//   G = objectness-weighted row mean and T = FC-ReLU-FC; rows are gated
//   elementwise and aggregated with the semantic projections.
// Localization path: plain pair-wise aggregation with its own projections.
//
// Every sum over proposals runs in a canonical order derived from the row
// contents, so permuting the proposals permutes the outputs bit-exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqdiou/matrix.hpp"
#include "seqdiou/random.hpp"

namespace seqdiou {

struct FeatureSet {
  Matrix features;                        // N x D, D even
  Vector objectness;                      // N entries in [0, 1]; empty when unavailable
  std::vector<std::int64_t> proposal_ids;  // optional, carried through
};

/// Query/key projections of one pair-wise aggregation.
struct AttentionParams {
  Matrix phi;  // channels x attn_dim
  Matrix psi;  // channels x attn_dim
};

/// FC-ReLU-FC transform applied to the object-aware feature.
struct GateParams {
  Matrix w1;  // channels x channels
  Vector b1;
  Matrix w2;  // channels x channels
  Vector b2;
};

/// Parameters of one OFA module.
struct OfaParams {
  AttentionParams semantic;
  GateParams gate;
  AttentionParams localization;

  std::size_t channels() const { return semantic.phi.rows(); }
  std::size_t attn_dim() const { return semantic.phi.cols(); }
};

/// How the semantic path reduces the proposal set to one global vector.
enum class GlobalReducer {
  objectness_weighted,  // ofa
  mean,                 // gcp ablation
};

struct OfaOptions {
  GlobalReducer reducer = GlobalReducer::objectness_weighted;
};

struct AttentionResult {
  Matrix output;  // N x channels
  Matrix delta;   // N x N, rows sum to 1
};

struct SemanticResult {
  Matrix output;
  Matrix delta;
  Vector global;  // reduced feature fed to the gate transform
  Vector gate;    // channel weights, sum to 1
};

struct OfaOutput {
  Matrix semantic;      // N x D/2
  Matrix localization;  // N x D/2
  std::vector<Matrix> semantic_delta;      // one per stacked module
  std::vector<Matrix> localization_delta;  // one per stacked module
  std::vector<Vector> gates;               // one per stacked module
};

class OfaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Deterministic init: every entry uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline OfaParams init_ofa_params(std::size_t channels, std::size_t attn_dim, std::uint64_t seed) {
  if (channels == 0 || attn_dim == 0) throw OfaError("init_ofa_params: zero dimension");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  auto fill = [&](Matrix m) {
    for (double& x : m.data()) x = rng.uniform(-bound, bound);
    return m;
  };
  auto fillv = [&](std::size_t n) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
  };
  OfaParams p;
  p.semantic.phi = fill(Matrix(channels, attn_dim));
  p.semantic.psi = fill(Matrix(channels, attn_dim));
  p.gate.w1 = fill(Matrix(channels, channels));
  p.gate.b1 = fillv(channels);
  p.gate.w2 = fill(Matrix(channels, channels));
  p.gate.b2 = fillv(channels);
  p.localization.phi = fill(Matrix(channels, attn_dim));
  p.localization.psi = fill(Matrix(channels, attn_dim));
  return p;
}

/// All-zero parameters: uniform attention and a uniform gate.
inline OfaParams zero_ofa_params(std::size_t channels, std::size_t attn_dim) {
  OfaParams p;
  p.semantic = {Matrix(channels, attn_dim), Matrix(channels, attn_dim)};
  p.gate = {Matrix(channels, channels), Vector(channels, 0.0), Matrix(channels, channels),
            Vector(channels, 0.0)};
  p.localization = {Matrix(channels, attn_dim), Matrix(channels, attn_dim)};
  return p;
}

/// Calls fn(double&) on every scalar parameter in a fixed order.
template <typename Params, typename Fn>
void for_each_parameter(Params& p, Fn&& fn) {
  for (auto* m : {&p.semantic.phi, &p.semantic.psi, &p.gate.w1, &p.gate.w2,
                  &p.localization.phi, &p.localization.psi}) {
    for (auto& x : m->data()) fn(x);
  }
  for (auto* v : {&p.gate.b1, &p.gate.b2}) {
    for (auto& x : *v) fn(x);
  }
}

/// Proposal order by lexicographic (row, objectness). Identical keys carry
/// identical values through every stage, so their relative order is moot.
inline std::vector<std::size_t> canonical_order(const Matrix& f, std::span<const double> s = {}) {
  std::vector<std::size_t> order(f.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = f.row(a);
    auto rb = f.row(b);
    for (std::size_t c = 0; c < f.cols(); ++c) {
      if (ra[c] != rb[c]) return ra[c] < rb[c];
    }
    if (!s.empty() && s[a] != s[b]) return s[a] < s[b];
    return false;
  });
  return order;
}

inline std::pair<Matrix, Matrix> split_features(const FeatureSet& fs) {
  const Matrix& f = fs.features;
  if (f.cols() % 2 != 0) throw OfaError("split_features: feature width must be even");
  const std::size_t half = f.cols() / 2;
  Matrix sem(f.rows(), half);
  Matrix loc(f.rows(), half);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    for (std::size_t c = 0; c < half; ++c) {
      sem(i, c) = f(i, c);
      loc(i, c) = f(i, half + c);
    }
  }
  return {std::move(sem), std::move(loc)};
}

inline Matrix concat_columns(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw OfaError("concat_columns: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(i, c) = a(i, c);
    for (std::size_t c = 0; c < b.cols(); ++c) out(i, a.cols() + c) = b(i, c);
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> order_or_identity(std::span<const std::size_t> order,
                                                  std::size_t n) {
  if (!order.empty()) {
    if (order.size() != n) throw OfaError("proposal order has wrong length");
    return {order.begin(), order.end()};
  }
  std::vector<std::size_t> id(n);
  std::iota(id.begin(), id.end(), std::size_t{0});
  return id;
}

inline void softmax_in_place(std::span<double> v, std::span<const std::size_t> order) {
  double hi = v[0];
  for (double x : v) hi = std::max(hi, x);
  for (double& x : v) x = std::exp(x - hi);
  double sum = 0.0;
  for (std::size_t k : order) sum += v[k];
  for (double& x : v) x /= sum;
}

struct AttentionCache {
  Matrix input;  // N x m
  Matrix query;  // N x p
  Matrix key;    // N x p
  Matrix delta;  // N x N
  Matrix pre;    // N x m, before ReLU
  Matrix output;
};

inline AttentionCache attention_forward(const Matrix& x, const AttentionParams& ap,
                                        std::span<const std::size_t> order) {
  if (x.rows() == 0) throw OfaError("pairwise_aggregate: empty proposal set");
  if (ap.phi.rows() != x.cols() || ap.psi.rows() != x.cols() || ap.phi.cols() != ap.psi.cols()) {
    throw OfaError("pairwise_aggregate: projection shape mismatch");
  }
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  AttentionCache c;
  c.input = x;
  c.query = matmul(x, ap.phi);
  c.key = matmul(x, ap.psi);
  c.delta = matmul_nt(c.query, c.key);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ap.phi.cols()));
  for (double& v : c.delta.data()) v *= scale;
  for (std::size_t i = 0; i < n; ++i) softmax_in_place(c.delta.row(i), order);

  c.pre = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < m; ++ch) {
      double acc = 0.0;
      for (std::size_t j : order) acc += c.delta(i, j) * x(j, ch);
      c.pre(i, ch) += acc;
    }
  }
  c.output = c.pre;
  for (double& v : c.output.data()) v = std::max(v, 0.0);
  return c;
}

// Normalised weights s_i / sum(s), summed in canonical order.
inline Vector reducer_weights(std::span<const double> s, std::size_t n, GlobalReducer reducer,
                              std::span<const std::size_t> order) {
  if (reducer == GlobalReducer::mean) return Vector(n, 1.0 / static_cast<double>(n));
  if (s.size() != n) throw OfaError("object-aware extraction requires one objectness score per proposal");
  double total = 0.0;
  for (std::size_t k : order) {
    if (!(s[k] >= 0.0) || !std::isfinite(s[k])) throw OfaError("objectness must be finite and non-negative");
    total += s[k];
  }
  if (!(total > 0.0)) throw OfaError("object-aware extraction: objectness scores sum to zero");
  Vector w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = s[i] / total;
  return w;
}

inline Vector weighted_rows(const Matrix& f, const Vector& w, std::span<const std::size_t> order) {
  Vector g(f.cols(), 0.0);
  for (std::size_t ch = 0; ch < f.cols(); ++ch) {
    double acc = 0.0;
    for (std::size_t k : order) acc += w[k] * f(k, ch);
    g[ch] = acc;
  }
  return g;
}

struct SemanticCache {
  Vector weights;     // per-proposal reducer weights
  Vector global;      // reduced feature
  Vector hidden_pre;  // T's first layer before ReLU
  Vector hidden;
  Vector gate;        // softmax over channels
  Matrix input;       // F^s
  AttentionCache attention;  // over the gated rows
};

inline SemanticCache semantic_forward(const Matrix& fs, std::span<const double> s,
                                      const OfaParams& p, GlobalReducer reducer,
                                      std::span<const std::size_t> order,
                                      const Vector* frozen_global = nullptr) {
  const std::size_t m = fs.cols();
  if (p.gate.w1.rows() != m || p.gate.w1.cols() != m || p.gate.w2.rows() != m ||
      p.gate.w2.cols() != m || p.gate.b1.size() != m || p.gate.b2.size() != m) {
    throw OfaError("semantic_path: gate transform shape mismatch");
  }
  SemanticCache c;
  c.input = fs;
  c.weights = reducer_weights(s, fs.rows(), reducer, order);
  c.global = frozen_global ? *frozen_global : weighted_rows(fs, c.weights, order);
  c.hidden_pre = vecmat(c.global, p.gate.w1);
  for (std::size_t k = 0; k < m; ++k) c.hidden_pre[k] += p.gate.b1[k];
  c.hidden = c.hidden_pre;
  for (double& v : c.hidden) v = std::max(v, 0.0);
  c.gate = vecmat(c.hidden, p.gate.w2);
  for (std::size_t k = 0; k < m; ++k) c.gate[k] += p.gate.b2[k];
  std::vector<std::size_t> channels(m);
  std::iota(channels.begin(), channels.end(), std::size_t{0});
  softmax_in_place(c.gate, channels);

  Matrix gated = fs;
  for (std::size_t i = 0; i < gated.rows(); ++i) {
    for (std::size_t ch = 0; ch < m; ++ch) gated(i, ch) *= c.gate[ch];
  }
  c.attention = attention_forward(gated, p.semantic, order);
  return c;
}

struct StageCache {
  SemanticCache semantic;
  AttentionCache localization;
};

struct OfaForward {
  std::vector<std::size_t> order;
  std::vector<StageCache> stages;
};

inline void check_feature_set(const FeatureSet& fs) {
  if (fs.features.rows() == 0) throw OfaError("feature set has no proposals");
  if (fs.features.cols() == 0 || fs.features.cols() % 2 != 0) {
    throw OfaError("feature width must be even and positive");
  }
  for (double v : fs.features.data()) {
    if (!std::isfinite(v)) throw OfaError("feature entries must be finite");
  }
}

inline OfaForward ofa_forward(const FeatureSet& fs, std::span<const OfaParams> params,
                              const OfaOptions& opt,
                              const std::vector<Vector>* frozen_globals = nullptr) {
  check_feature_set(fs);
  if (params.empty()) throw OfaError("stacked_ofa: no modules");
  OfaForward fw;
  fw.order = canonical_order(fs.features, fs.objectness);
  auto [sem, loc] = split_features(fs);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].channels() != sem.cols() || params[k].localization.phi.rows() != loc.cols()) {
      throw OfaError("stacked_ofa: module " + std::to_string(k) + " has wrong channel count");
    }
    StageCache st;
    st.semantic = semantic_forward(sem, fs.objectness, params[k], opt.reducer, fw.order,
                                   frozen_globals ? &(*frozen_globals)[k] : nullptr);
    st.localization = attention_forward(loc, params[k].localization, fw.order);
    sem = st.semantic.attention.output;
    loc = st.localization.output;
    fw.stages.push_back(std::move(st));
  }
  return fw;
}

}  // namespace detail

/// Pair-wise aggregation; returns the aggregated rows and attention weights.
inline AttentionResult pairwise_aggregate(const Matrix& f, const AttentionParams& ap,
                                          std::span<const std::size_t> order = {}) {
  const auto ord = order.empty() ? canonical_order(f) : detail::order_or_identity(order, f.rows());
  auto c = detail::attention_forward(f, ap, ord);
  return {std::move(c.output), std::move(c.delta)};
}

/// Objectness-weighted mean of the rows. Throws when the scores sum to zero.
inline Vector object_aware_extract(const Matrix& f, std::span<const double> s) {
  if (f.rows() == 0) throw OfaError("object_aware_extract: empty proposal set");
  const auto ord = canonical_order(f, s);
  return detail::weighted_rows(f, detail::reducer_weights(s, f.rows(), GlobalReducer::objectness_weighted, ord), ord);
}

/// Unweighted row mean (gcp ablation).
inline Vector gcp_extract(const Matrix& f) {
  if (f.rows() == 0) throw OfaError("gcp_extract: empty proposal set");
  const auto ord = canonical_order(f);
  return detail::weighted_rows(f, detail::reducer_weights({}, f.rows(), GlobalReducer::mean, ord), ord);
}

inline SemanticResult semantic_path(const Matrix& fs, std::span<const double> s, const OfaParams& p,
                                    const OfaOptions& opt = {}) {
  if (fs.rows() == 0) throw OfaError("semantic_path: empty proposal set");
  const auto ord = canonical_order(fs, s);
  auto c = detail::semantic_forward(fs, s, p, opt.reducer, ord);
  return {std::move(c.attention.output), std::move(c.attention.delta), std::move(c.global),
          std::move(c.gate)};
}

inline AttentionResult localization_path(const Matrix& fl, const OfaParams& p) {
  return pairwise_aggregate(fl, p.localization);
}

/// Splits the features once, then applies every module's semantic and
/// localization paths in sequence.
inline OfaOutput stacked_ofa(const FeatureSet& fs, std::span<const OfaParams> params,
                             const OfaOptions& opt = {}) {
  auto fw = detail::ofa_forward(fs, params, opt);
  OfaOutput out;
  for (auto& st : fw.stages) {
    out.semantic_delta.push_back(st.semantic.attention.delta);
    out.localization_delta.push_back(st.localization.delta);
    out.gates.push_back(st.semantic.gate);
  }
  out.semantic = std::move(fw.stages.back().semantic.attention.output);
  out.localization = std::move(fw.stages.back().localization.output);
  return out;
}

}  // namespace seqdiou
