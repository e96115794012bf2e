#pragma once

// Mean-field baseline: Q(Z) Q(X^H) with both factors fully factorized. This is
// the structured family restricted to tables Q_ij^{kl} = m_i^k, optimized by
// Gauss-Seidel coordinate descent on the same free energy.

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"
#include "dyntree/svi.hpp"

namespace dyntree {

struct MeanFieldOptions {
  int inner_iterations = 20;  // mean sweeps per mu update
  int max_outer = 100;
  double tolerance = 0.01;
  std::uint64_t seed = 0;
  double perturbation = 1e-3;  // symmetry-breaking noise on the initial means
};

struct MeanFieldPosterior {
  std::vector<int> observed;
  std::vector<std::vector<double>> mu;
  std::vector<std::vector<double>> means;
  double initial_free_energy = kInf;
  std::vector<double> free_energy_trace;  // one value per outer iteration
  std::vector<std::string> diagnostics;
  bool monotone = true;
  bool converged = false;
};

namespace detail {

// w * log p with the conventions 0 * log 0 = 0 and w > 0, p = 0 -> -inf.
inline double weighted_log(double w, double p) {
  if (w <= 0.0) return 0.0;
  return p > 0.0 ? w * std::log(p) : kNegInf;
}

}  // namespace detail

// F_MF = sum mu log(mu/rho) + sum_i sum_k m log m - sum_edges mu sum_kl m_i^k m_j^l log P^{kl}.
inline double mf_free_energy(const MeanFieldPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  const std::vector<double> virtual_mean = detail::one_hot(m, 0);
  double f = 0.0;
  for (int i = 0; i < model.num_nodes(); ++i) {
    for (int k = 0; k < m; ++k) {
      const double p = s.means[i][k];
      if (p > 0.0) f += p * std::log(p);
    }
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const double w = s.mu[i][e];
      if (w <= 0.0) continue;
      f += x_log_x_over_y(w, menu[e].rho);
      const auto& pm = menu[e].parent == kVirtualRoot ? virtual_mean : s.means[menu[e].parent];
      const Cpt& p = model.cpt(menu[e].cpt);
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) f -= w * detail::weighted_log(s.means[i][k] * pm[l], p(k, l));
    }
  }
  return f;
}

// One top-down sweep over hidden nodes:
// m_i^k proportional to exp(sum_j mu_ij sum_l m_j^l log P_ij^{kl}
//                           + sum_c mu_ci sum_g m_c^g log P_ci^{gk}).
inline void mf_update_means(MeanFieldPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  const std::vector<double> virtual_mean = detail::one_hot(m, 0);
  std::vector<double> logits(m);
  for (int i = 0; i < model.num_nodes(); ++i) {
    if (s.observed[i] != kUnobserved) continue;
    std::fill(logits.begin(), logits.end(), 0.0);
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const double w = s.mu[i][e];
      const auto& pm = menu[e].parent == kVirtualRoot ? virtual_mean : s.means[menu[e].parent];
      const Cpt& p = model.cpt(menu[e].cpt);
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) logits[k] += detail::weighted_log(w * pm[l], p(k, l));
    }
    for (const ChildLink& link : model.children(i)) {
      const double w = s.mu[link.child][link.entry];
      const auto& cm = s.means[link.child];
      const Cpt& p = model.edge_cpt(link.child, link.entry);
      for (int k = 0; k < m; ++k)
        for (int g = 0; g < m; ++g) logits[k] += detail::weighted_log(w * cm[g], p(g, k));
    }
    if (!softmax_in_place(logits)) {
      throw InferenceError("mean-field update: node " + to_string(model.ref(i)) + " has no admissible state");
    }
    s.means[i] = logits;
  }
}

// mu_ij proportional to rho_ij exp(sum_kl m_i^k m_j^l log P_ij^{kl}).
inline void mf_update_mu(MeanFieldPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  std::vector<double> logits;
  for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
    const auto menu = model.menu(i);
    logits.assign(menu.size(), 0.0);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      double v = std::log(menu[e].rho);
      const auto& pm = s.means[menu[e].parent];
      const Cpt& p = model.cpt(menu[e].cpt);
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) v += detail::weighted_log(s.means[i][k] * pm[l], p(k, l));
      logits[e] = v;
    }
    if (!softmax_in_place(logits)) {
      throw InferenceError("mean-field mu update: every parent of " + to_string(model.ref(i)) + " has zero weight");
    }
    s.mu[i] = logits;
  }
}

inline MeanFieldPosterior mf_init(const DynamicTreeModel& model, const Evidence& evidence,
                                  const MeanFieldOptions& options = {}) {
  if (auto errors = validate(model, evidence, false); !errors.empty()) throw ModelError(errors);
  const int n = model.num_nodes();
  const int m = model.num_states();
  Rng rng(options.seed);
  MeanFieldPosterior s;
  s.observed.resize(n);
  s.mu.resize(n);
  s.means.assign(n, std::vector<double>(m, 1.0 / m));
  for (int i = 0; i < n; ++i) {
    s.observed[i] = observed_state(model, evidence, i);
    for (const Edge& e : model.menu(i)) s.mu[i].push_back(e.rho);
    if (s.observed[i] != kUnobserved) {
      s.means[i] = detail::one_hot(m, s.observed[i]);
    } else {
      for (double& x : s.means[i]) x += options.perturbation * (2.0 * uniform01(rng) - 1.0) / m;
      normalize(s.means[i]);
    }
  }
  s.initial_free_energy = mf_free_energy(s, model);
  return s;
}

inline void mf_run(MeanFieldPosterior& s, const DynamicTreeModel& model, const MeanFieldOptions& options) {
  if (options.inner_iterations < 1 || options.max_outer < 1) {
    throw std::invalid_argument("mean-field iteration counts must be at least 1");
  }
  if (!(options.tolerance > 0.0)) throw std::invalid_argument("mean-field tolerance must be positive");
  s.converged = false;
  double prev = s.free_energy_trace.empty() ? s.initial_free_energy : s.free_energy_trace.back();
  for (int outer = 0; outer < options.max_outer; ++outer) {
    for (int sweep = 0; sweep < options.inner_iterations; ++sweep) mf_update_means(s, model);
    mf_update_mu(s, model);
    const double f = mf_free_energy(s, model);
    if (f > prev + kMonotoneSlack) {
      s.monotone = false;
      s.diagnostics.push_back("free energy increased on outer iteration " + std::to_string(outer + 1));
    }
    s.free_energy_trace.push_back(f);
    if (std::abs(f - prev) < options.tolerance) {
      s.converged = true;
      break;
    }
    prev = f;
  }
}

inline MeanFieldPosterior mf_fit(const DynamicTreeModel& model, const Evidence& evidence,
                                 const MeanFieldOptions& options = {}) {
  MeanFieldPosterior s = mf_init(model, evidence, options);
  mf_run(s, model, options);
  return s;
}

// The structured posterior with Q_ij^{kl} = m_i^k, same mu and means; its
// svi_free_energy equals mf_free_energy of `mf`.
inline StructuredPosterior svi_from_mean_field(const MeanFieldPosterior& mf, const DynamicTreeModel& model) {
  const int n = model.num_nodes();
  const int m = model.num_states();
  StructuredPosterior s;
  s.observed = mf.observed;
  s.mu = mf.mu;
  s.means = mf.means;
  s.lambdas.assign(n, std::vector<double>(m, 1.0));
  s.lambda_log_scale.assign(n, 0.0);
  s.q_tables.resize(n);
  for (int i = 0; i < n; ++i) {
    if (s.observed[i] != kUnobserved) s.lambdas[i] = detail::one_hot(m, s.observed[i]);
    StateMatrix q(m);
    for (int k = 0; k < m; ++k)
      for (int l = 0; l < m; ++l) q(k, l) = mf.means[i][k];
    s.q_tables[i].assign(model.menu(i).size(), q);
  }
  s.initial_free_energy = svi_free_energy(s, model);
  return s;
}

}  // namespace dyntree
