#pragma once

// Reverse-mode gradients of stacked_ofa under loss = sum of all outputs,
// and a central-difference check of those gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include "seqdiou/ofa.hpp"

namespace seqdiou {

struct OfaGradients {
  std::vector<OfaParams> params;  // same shapes as the module parameters
  Matrix features;
  Vector objectness;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  // Entries below the floor are compared on absolute error; a step-1e-5
  // central difference carries roughly 1e-9 of rounding noise.
  double denominator_floor = 1e-5;
  double kink_margin = 1e-3;
  // Treat the object-aware global feature as a constant (no gradient
  // reaches the proposals or objectness through it).
  bool stop_global_gradient = false;
  OfaOptions ofa;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // name of the entry with the largest relative error
  // Smallest |pre-activation| over every ReLU in the forward pass.
  double min_preactivation = std::numeric_limits<double>::infinity();
  bool kink = false;  // min_preactivation < kink_margin; resample the instance
};

namespace detail {

inline OfaParams zeros_like(const OfaParams& p) {
  return zero_ofa_params(p.channels(), p.attn_dim());
}

// Backward through A(X) given dL/dOutput. Accumulates parameter gradients
// and returns dL/dX.
inline Matrix attention_backward(const AttentionCache& c, const AttentionParams& ap,
                                 const Matrix& d_out, AttentionParams& grad) {
  const std::size_t n = c.input.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(ap.phi.cols()));
  Matrix d_pre = d_out;
  for (std::size_t k = 0; k < d_pre.size(); ++k) {
    if (!(c.pre.data()[k] > 0.0)) d_pre.data()[k] = 0.0;
  }
  Matrix dx = d_pre;                       // residual
  Matrix d_delta = matmul_nt(d_pre, c.input);  // N x N
  dx += matmul_tn(c.delta, d_pre);          // delta^T dZ

  Matrix d_logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += d_delta(i, j) * c.delta(i, j);
    for (std::size_t j = 0; j < n; ++j) {
      d_logits(i, j) = c.delta(i, j) * (d_delta(i, j) - dot) * scale;
    }
  }
  Matrix d_query = matmul(d_logits, c.key);     // N x p
  Matrix d_key = matmul_tn(d_logits, c.query);  // N x p
  grad.phi += matmul_tn(c.input, d_query);
  grad.psi += matmul_tn(c.input, d_key);
  dx += matmul_nt(d_query, ap.phi);
  dx += matmul_nt(d_key, ap.psi);
  return dx;
}

// Returns dL/dF^s and accumulates dL/ds.
inline Matrix semantic_backward(const SemanticCache& c, const OfaParams& p, const Matrix& d_out,
                                OfaParams& grad, Vector& d_objectness, GlobalReducer reducer,
                                bool stop_global) {
  const std::size_t n = c.input.rows();
  const std::size_t m = c.input.cols();
  Matrix d_gated = attention_backward(c.attention, p.semantic, d_out, grad.semantic);

  Matrix dx(n, m);
  Vector d_gate(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < m; ++ch) {
      dx(i, ch) = d_gated(i, ch) * c.gate[ch];
      d_gate[ch] += d_gated(i, ch) * c.input(i, ch);
    }
  }
  double dot = 0.0;
  for (std::size_t ch = 0; ch < m; ++ch) dot += d_gate[ch] * c.gate[ch];
  Vector d_u(m);
  for (std::size_t ch = 0; ch < m; ++ch) d_u[ch] = c.gate[ch] * (d_gate[ch] - dot);

  // u = hidden w2 + b2
  Vector d_hidden(m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      grad.gate.w2(a, b) += c.hidden[a] * d_u[b];
      d_hidden[a] += p.gate.w2(a, b) * d_u[b];
    }
  }
  for (std::size_t b = 0; b < m; ++b) grad.gate.b2[b] += d_u[b];
  for (std::size_t a = 0; a < m; ++a) {
    if (!(c.hidden_pre[a] > 0.0)) d_hidden[a] = 0.0;
  }
  // hidden_pre = global w1 + b1
  Vector d_global(m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      grad.gate.w1(a, b) += c.global[a] * d_hidden[b];
      d_global[a] += p.gate.w1(a, b) * d_hidden[b];
    }
  }
  for (std::size_t b = 0; b < m; ++b) grad.gate.b1[b] += d_hidden[b];
  if (stop_global) return dx;

  // global = sum_i w_i f_i
  Vector d_w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < m; ++ch) {
      dx(i, ch) += c.weights[i] * d_global[ch];
      d_w[i] += d_global[ch] * c.input(i, ch);
    }
  }
  if (reducer == GlobalReducer::objectness_weighted && !d_objectness.empty()) {
    // w_i = s_i / S  =>  dL/ds_j = (dL/dw_j - sum_i dL/dw_i w_i) / S.
    // The caller applies the 1/S factor.
    double wdot = 0.0;
    for (std::size_t i = 0; i < n; ++i) wdot += d_w[i] * c.weights[i];
    for (std::size_t j = 0; j < n; ++j) d_objectness[j] += d_w[j] - wdot;
  }
  return dx;
}

inline double sum_outputs(const OfaForward& fw) {
  double acc = 0.0;
  for (double v : fw.stages.back().semantic.attention.output.data()) acc += v;
  for (double v : fw.stages.back().localization.output.data()) acc += v;
  return acc;
}

// After the first stage, a channel whose input column is all zero comes from
// ReLUs clamped below the margin; its pre-activations stay exactly zero
// under small perturbations and are skipped.
inline double attention_min_abs(const AttentionCache& c, bool skip_dead_columns) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t ch = 0; ch < c.pre.cols(); ++ch) {
    if (skip_dead_columns) {
      bool dead = true;
      for (std::size_t i = 0; i < c.input.rows() && dead; ++i) dead = c.input(i, ch) == 0.0;
      if (dead) continue;
    }
    for (std::size_t i = 0; i < c.pre.rows(); ++i) lo = std::min(lo, std::abs(c.pre(i, ch)));
  }
  return lo;
}

inline double min_abs_preactivation(const OfaForward& fw) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < fw.stages.size(); ++k) {
    const auto& st = fw.stages[k];
    lo = std::min(lo, attention_min_abs(st.semantic.attention, k > 0));
    for (double v : st.semantic.hidden_pre) lo = std::min(lo, std::abs(v));
    lo = std::min(lo, attention_min_abs(st.localization, k > 0));
  }
  return lo;
}

}  // namespace detail

/// Analytic gradients of sum(stacked_ofa outputs).
inline OfaGradients ofa_gradients(const FeatureSet& fs, std::span<const OfaParams> params,
                                  const OfaOptions& opt = {}, bool stop_global_gradient = false) {
  const auto fw = detail::ofa_forward(fs, params, opt);
  const std::size_t n = fs.features.rows();
  const std::size_t half = fs.features.cols() / 2;

  OfaGradients g;
  for (const auto& p : params) g.params.push_back(detail::zeros_like(p));
  g.objectness.assign(fs.objectness.size(), 0.0);

  Matrix d_sem(n, half, 1.0);
  Matrix d_loc(n, half, 1.0);
  for (std::size_t k = params.size(); k-- > 0;) {
    const auto& st = fw.stages[k];
    Vector d_w_raw(g.objectness.size(), 0.0);
    d_sem = detail::semantic_backward(st.semantic, params[k], d_sem, g.params[k], d_w_raw,
                                      opt.reducer, stop_global_gradient);
    d_loc = detail::attention_backward(st.localization, params[k].localization, d_loc,
                                       g.params[k].localization);
    if (opt.reducer == GlobalReducer::objectness_weighted && !stop_global_gradient) {
      double total = 0.0;
      for (double s : fs.objectness) total += s;
      for (std::size_t j = 0; j < d_w_raw.size(); ++j) g.objectness[j] += d_w_raw[j] / total;
    }
  }
  g.features = Matrix(n, 2 * half);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < half; ++c) {
      g.features(i, c) = d_sem(i, c);
      g.features(i, half + c) = d_loc(i, c);
    }
  }
  return g;
}

/// Compares ofa_gradients against central differences on every parameter
/// and input entry (features and objectness).
inline GradCheckReport finite_diff_grad_check(const FeatureSet& fs, std::span<const OfaParams> params,
                                              const GradCheckOptions& opt = {}) {
  if (fs.features.rows() > 8 || fs.features.cols() > 16) {
    throw OfaError("finite_diff_grad_check: limited to N <= 8 and D <= 16");
  }
  const auto base = detail::ofa_forward(fs, params, opt.ofa);
  GradCheckReport rep;
  rep.min_preactivation = detail::min_abs_preactivation(base);
  rep.kink = rep.min_preactivation < opt.kink_margin;

  std::vector<Vector> frozen;
  for (const auto& st : base.stages) frozen.push_back(st.semantic.global);
  const std::vector<Vector>* freeze = opt.stop_global_gradient ? &frozen : nullptr;

  const auto analytic = ofa_gradients(fs, params, opt.ofa, opt.stop_global_gradient);

  FeatureSet work = fs;
  std::vector<OfaParams> wparams(params.begin(), params.end());
  auto loss = [&] { return detail::sum_outputs(detail::ofa_forward(work, wparams, opt.ofa, freeze)); };

  auto compare = [&](double& x, double a, const std::string& name) {
    const double orig = x;
    x = orig + opt.step;
    const double up = loss();
    x = orig - opt.step;
    const double down = loss();
    x = orig;
    const double num = (up - down) / (2.0 * opt.step);
    const double abs_err = std::abs(a - num);
    const double rel = abs_err / std::max({std::abs(a), std::abs(num), opt.denominator_floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (!(rel <= rep.max_rel_error)) {
      rep.max_rel_error = rel;
      rep.worst = name;
    }
    ++rep.checked;
  };

  for (std::size_t k = 0; k < wparams.size(); ++k) {
    std::vector<double> flat;
    for_each_parameter(analytic.params[k], [&](const double& v) { flat.push_back(v); });
    std::size_t idx = 0;
    for_each_parameter(wparams[k], [&](double& x) {
      compare(x, flat[idx], "module " + std::to_string(k) + " parameter " + std::to_string(idx));
      ++idx;
    });
  }
  for (std::size_t i = 0; i < work.features.size(); ++i) {
    compare(work.features.data()[i], analytic.features.data()[i], "feature " + std::to_string(i));
  }
  if (opt.ofa.reducer == GlobalReducer::objectness_weighted) {
    for (std::size_t i = 0; i < work.objectness.size(); ++i) {
      compare(work.objectness[i], analytic.objectness[i], "objectness " + std::to_string(i));
    }
  }
  return rep;
}

/// A seeded OFA problem: features uniform in [-1, 1], objectness on the
/// 1/256 grid in (0, 1], and two stacked modules with seeded weights.
struct OfaInstance {
  FeatureSet features;
  std::vector<OfaParams> params;
};

inline OfaInstance random_ofa_instance(Rng& rng, std::size_t n, std::size_t d,
                                       std::size_t attn_dim = 0, std::size_t stacks = 2) {
  if (n == 0 || d == 0 || d % 2 != 0) throw OfaError("random_ofa_instance: need N >= 1 and even D");
  const std::size_t half = d / 2;
  OfaInstance inst;
  inst.features.features = Matrix(n, d);
  for (double& x : inst.features.features.data()) x = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    inst.features.objectness.push_back(static_cast<double>(1 + rng.below(256)) / 256.0);
    inst.features.proposal_ids.push_back(static_cast<std::int64_t>(i));
  }
  for (std::size_t k = 0; k < stacks; ++k) {
    inst.params.push_back(init_ofa_params(half, attn_dim ? attn_dim : half, rng.below(1ull << 62)));
  }
  return inst;
}

/// Draws instances from `rng` until one has every ReLU pre-activation at
/// least `margin` away from zero. `resamples` counts rejected draws.
inline OfaInstance kink_free_instance(Rng& rng, std::size_t n, std::size_t d, double margin,
                                      std::size_t& resamples, std::size_t attn_dim = 0,
                                      const OfaOptions& opt = {}, std::size_t max_attempts = 10000) {
  resamples = 0;
  for (std::size_t a = 0; a < max_attempts; ++a) {
    auto inst = random_ofa_instance(rng, n, d, attn_dim);
    const auto fw = detail::ofa_forward(inst.features, inst.params, opt);
    if (detail::min_abs_preactivation(fw) >= margin) return inst;
    ++resamples;
  }
  throw OfaError("kink_free_instance: no kink-free instance found");
}

/// Rows of `fs` reordered so that row i of the result is row perm[i].
inline FeatureSet permute_rows(const FeatureSet& fs, std::span<const std::size_t> perm) {
  FeatureSet out;
  out.features = Matrix(fs.features.rows(), fs.features.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto src = fs.features.row(perm[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    if (!fs.objectness.empty()) out.objectness.push_back(fs.objectness[perm[i]]);
    if (!fs.proposal_ids.empty()) out.proposal_ids.push_back(fs.proposal_ids[perm[i]]);
  }
  return out;
}

/// Largest absolute difference between stacked_ofa on permuted inputs and
/// the correspondingly permuted outputs (features and attention weights).
inline double permutation_residual(const FeatureSet& fs, std::span<const OfaParams> params,
                                   std::span<const std::size_t> perm, const OfaOptions& opt = {}) {
  const auto base = stacked_ofa(fs, params, opt);
  const auto moved = stacked_ofa(permute_rows(fs, perm), params, opt);
  double r = 0.0;
  const std::size_t n = perm.size();
  auto rows = [&](const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < a.cols(); ++c) r = std::max(r, std::abs(b(i, c) - a(perm[i], c)));
    }
  };
  auto square = [&](const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) r = std::max(r, std::abs(b(i, j) - a(perm[i], perm[j])));
    }
  };
  rows(base.semantic, moved.semantic);
  rows(base.localization, moved.localization);
  for (std::size_t k = 0; k < base.gates.size(); ++k) {
    square(base.semantic_delta[k], moved.semantic_delta[k]);
    square(base.localization_delta[k], moved.localization_delta[k]);
    for (std::size_t c = 0; c < base.gates[k].size(); ++c) {
      r = std::max(r, std::abs(base.gates[k][c] - moved.gates[k][c]));
    }
  }
  return r;
}

/// Largest |row sum - 1| over every attention matrix, and |sum - 1| over gates.
inline std::pair<double, double> normalisation_residuals(const OfaOutput& out) {
  double attn = 0.0;
  double gate = 0.0;
  auto rows = [&](const Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (double v : m.row(i)) s += v;
      attn = std::max(attn, std::abs(s - 1.0));
    }
  };
  for (const auto& m : out.semantic_delta) rows(m);
  for (const auto& m : out.localization_delta) rows(m);
  for (const auto& g : out.gates) {
    double s = 0.0;
    for (double v : g) s += v;
    gate = std::max(gate, std::abs(s - 1.0));
  }
  return {attn, gate};
}

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> random_permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace seqdiou
