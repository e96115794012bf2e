#pragma once

// Structured variational inference for dynamic trees. The approximating
// distribution is itself a dynamic tree: factorized parent choices Q(Z) with
// weights mu, and per-edge conditional tables Q(x_child | x_parent). Given mu,
// the optimal tables follow from one upward lambda pass; means then flow down
// the mixture, and mu is re-optimized from lambdas and means.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"
#include "dyntree/tree_bp.hpp"

namespace dyntree {

struct FitOptions {
  int max_passes = std::numeric_limits<int>::max();
  double kl_tolerance = 0.01;  // stop when |F_t - F_{t-1}| falls below this
  double mu_damping = 0.0;     // mu <- (1 - d) * update + d * mu
};

inline constexpr double kMonotoneSlack = 1e-9;

struct StructuredPosterior {
  std::vector<int> observed;                       // per node: evidence state or kUnobserved
  std::vector<std::vector<double>> mu;             // per node, over its menu (top nodes: {1})
  std::vector<std::vector<StateMatrix>> q_tables;  // per node, per menu entry
  std::vector<std::vector<double>> lambdas;        // per node, max-normalized
  std::vector<double> lambda_log_scale;            // log of the factor removed from each lambda
  std::vector<std::vector<double>> means;          // per node
  double initial_free_energy = kInf;
  std::vector<double> free_energy_trace;  // one value per completed pass
  std::vector<std::string> diagnostics;
  bool monotone = true;
  bool converged = false;
};

namespace detail {

inline const std::vector<double>& parent_mean(const StructuredPosterior& s, const Edge& e,
                                              const std::vector<double>& virtual_mean) {
  return e.parent == kVirtualRoot ? virtual_mean : s.means[e.parent];
}

inline std::vector<double> one_hot(int m, int state) {
  std::vector<double> v(m, 0.0);
  v[state] = 1.0;
  return v;
}

// Table of an evidential edge: always emits the observed state.
inline StateMatrix degenerate_table(int m, int state) {
  StateMatrix q(m);
  for (int l = 0; l < m; ++l) q(state, l) = 1.0;
  return q;
}

inline void refresh_mean(const DynamicTreeModel& model, StructuredPosterior& s, int node) {
  const int m = model.num_states();
  if (s.observed[node] != kUnobserved) {
    s.means[node] = one_hot(m, s.observed[node]);
    return;
  }
  const std::vector<double> virtual_mean = one_hot(m, 0);
  auto& out = s.means[node];
  out.assign(m, 0.0);
  const auto menu = model.menu(node);
  for (std::size_t e = 0; e < menu.size(); ++e) {
    const double w = s.mu[node][e];
    if (w == 0.0) continue;
    const auto& pm = parent_mean(s, menu[e], virtual_mean);
    const StateMatrix& q = s.q_tables[node][e];
    for (int k = 0; k < m; ++k) {
      double acc = 0.0;
      for (int l = 0; l < m; ++l) acc += q(k, l) * pm[l];
      out[k] += w * acc;
    }
  }
}

}  // namespace detail

// Sweeps the means top-down (hidden nodes: mixture over menu of Q times the
// parent mean; evidential nodes stay clamped).
inline void svi_means_pass(StructuredPosterior& s, const DynamicTreeModel& model) {
  for (int i = 0; i < model.num_nodes(); ++i) detail::refresh_mean(model, s, i);
}

// Variational free energy: structural KL of mu against rho plus the
// mu-weighted conditional KL of every edge table, evidential edges included
// (their log Q term vanishes, leaving the data term).
inline double svi_free_energy(const StructuredPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  const std::vector<double> virtual_mean = detail::one_hot(m, 0);
  double f = 0.0;
  for (int i = 0; i < model.num_nodes(); ++i) {
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const double w = s.mu[i][e];
      if (w <= 0.0) continue;
      f += x_log_x_over_y(w, menu[e].rho);
      const auto& pm = detail::parent_mean(s, menu[e], virtual_mean);
      const StateMatrix& q = s.q_tables[i][e];
      const Cpt& p = model.cpt(menu[e].cpt);
      double edge = 0.0;
      for (int l = 0; l < m; ++l) {
        if (pm[l] <= 0.0) continue;
        for (int k = 0; k < m; ++k) edge += pm[l] * x_log_x_over_y(q(k, l), p(k, l));
      }
      f += w * edge;
    }
  }
  return f;
}

// Upward pass: lambda_s^k = prod_c [sum_g P_cs^{gk} lambda_c^g]^{mu_cs}, in
// logs and rescaled to max 1 per node. Evidential nodes hold their one-hot.
inline void svi_lambda_pass(StructuredPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  std::vector<double> log_lambda(m);
  for (int i = model.num_nodes() - 1; i >= 0; --i) {
    if (s.observed[i] != kUnobserved) {
      s.lambdas[i] = detail::one_hot(m, s.observed[i]);
      s.lambda_log_scale[i] = 0.0;
      continue;
    }
    std::fill(log_lambda.begin(), log_lambda.end(), 0.0);
    double carried = 0.0;
    for (const ChildLink& link : model.children(i)) {
      const double w = s.mu[link.child][link.entry];
      if (w == 0.0) continue;
      const Cpt& p = model.edge_cpt(link.child, link.entry);
      const auto& lc = s.lambdas[link.child];
      bool any = false;
      for (int k = 0; k < m; ++k) {
        double bracket = 0.0;
        for (int g = 0; g < m; ++g) bracket += p(g, k) * lc[g];
        if (bracket > 0.0) {
          any = true;
          log_lambda[k] += w * std::log(bracket);
        } else {
          log_lambda[k] = kNegInf;
        }
      }
      if (!any) {
        throw InferenceError("lambda pass: child " + to_string(model.ref(link.child)) + " sends a zero message to " +
                             to_string(model.ref(i)));
      }
      carried += w * s.lambda_log_scale[link.child];
    }
    const double hi = *std::max_element(log_lambda.begin(), log_lambda.end());
    if (hi == kNegInf) {
      throw InferenceError("lambda pass: node " + to_string(model.ref(i)) + " has an all-zero lambda");
    }
    for (int k = 0; k < m; ++k) s.lambdas[i][k] = std::exp(log_lambda[k] - hi);
    s.lambda_log_scale[i] = hi + carried;
  }
}

// Q_st^{ab} = P_st^{ab} lambda_s^a / sum_a' P_st^{a'b} lambda_s^{a'} for every
// hidden edge; evidential edges keep their fixed degenerate tables.
inline void svi_q_update(StructuredPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  for (int i = 0; i < model.num_nodes(); ++i) {
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      StateMatrix& q = s.q_tables[i][e];
      if (s.observed[i] != kUnobserved) {
        q = detail::degenerate_table(m, s.observed[i]);
        continue;
      }
      const Cpt& p = model.cpt(menu[e].cpt);
      const auto& lam = s.lambdas[i];
      for (int b = 0; b < m; ++b) {
        double z = 0.0;
        for (int a = 0; a < m; ++a) z += (q(a, b) = p(a, b) * lam[a]);
        if (z > 0.0) {
          for (int a = 0; a < m; ++a) q(a, b) /= z;
        } else {
          for (int a = 0; a < m; ++a) q(a, b) = 1.0 / m;
          s.diagnostics.push_back("q update: parent state " + std::to_string(b) + " impossible on edge " +
                                  to_string(model.ref(i)) + " entry " + std::to_string(e) + "; column set uniform");
        }
      }
    }
  }
}

// mu_st proportional to rho_st exp(sum_l m_t^l log sum_k P_st^{kl} lambda_s^k).
// Layers are updated top-down and each layer's means are refreshed before the
// next layer, so every layer step is an exact minimization given the rest.
inline void svi_mu_update(StructuredPosterior& s, const DynamicTreeModel& model, double damping = 0.0) {
  const int m = model.num_states();
  std::vector<double> logits;
  for (int d = 1; d < model.num_layers(); ++d) {
    const int begin = model.layer_offset(d);
    const int end = begin + model.layer_size(d);
    for (int i = begin; i < end; ++i) {
      const auto menu = model.menu(i);
      const auto& lam = s.lambdas[i];
      logits.assign(menu.size(), 0.0);
      for (std::size_t e = 0; e < menu.size(); ++e) {
        double v = std::log(menu[e].rho);
        const Cpt& p = model.cpt(menu[e].cpt);
        const auto& pm = s.means[menu[e].parent];
        for (int l = 0; l < m && v != kNegInf; ++l) {
          if (pm[l] <= 0.0) continue;
          double bracket = 0.0;
          for (int k = 0; k < m; ++k) bracket += p(k, l) * lam[k];
          v = bracket > 0.0 ? v + pm[l] * std::log(bracket) : kNegInf;
        }
        logits[e] = v;
      }
      if (!softmax_in_place(logits)) {
        throw InferenceError("mu update: every parent of " + to_string(model.ref(i)) +
                             " has zero weight (impossible evidence)");
      }
      for (std::size_t e = 0; e < menu.size(); ++e) s.mu[i][e] = (1.0 - damping) * logits[e] + damping * s.mu[i][e];
    }
    for (int i = begin; i < end; ++i) detail::refresh_mean(model, s, i);
  }
}

// Prior-initialized state: mu = rho, tables = P, evidential lambdas one-hot,
// hidden lambdas all ones, means from the downward pass.
inline StructuredPosterior svi_init(const DynamicTreeModel& model, const Evidence& evidence) {
  if (auto errors = validate(model, evidence, false); !errors.empty()) throw ModelError(errors);
  const int n = model.num_nodes();
  const int m = model.num_states();
  StructuredPosterior s;
  s.observed.assign(n, kUnobserved);
  s.mu.resize(n);
  s.q_tables.resize(n);
  s.lambdas.assign(n, std::vector<double>(m, 1.0));
  s.lambda_log_scale.assign(n, 0.0);
  s.means.assign(n, std::vector<double>(m, 0.0));
  for (int i = 0; i < n; ++i) {
    s.observed[i] = observed_state(model, evidence, i);
    const auto menu = model.menu(i);
    for (const Edge& e : menu) {
      s.mu[i].push_back(e.rho);
      s.q_tables[i].push_back(s.observed[i] == kUnobserved ? model.cpt(e.cpt)
                                                           : detail::degenerate_table(m, s.observed[i]));
    }
    if (s.observed[i] != kUnobserved) s.lambdas[i] = detail::one_hot(m, s.observed[i]);
  }
  svi_means_pass(s, model);
  s.initial_free_energy = svi_free_energy(s, model);
  return s;
}

// One full pass: lambda up, tables, means down, mu; appends F to the trace.
inline double svi_pass(StructuredPosterior& s, const DynamicTreeModel& model, double mu_damping = 0.0) {
  svi_lambda_pass(s, model);
  svi_q_update(s, model);
  svi_means_pass(s, model);
  svi_mu_update(s, model, mu_damping);
  const double f = svi_free_energy(s, model);
  const double prev = s.free_energy_trace.empty() ? s.initial_free_energy : s.free_energy_trace.back();
  if (f > prev + kMonotoneSlack) {
    s.monotone = false;
    s.diagnostics.push_back("free energy increased on pass " + std::to_string(s.free_energy_trace.size() + 1) +
                            ": " + detail::fmt_double(prev) + " -> " + detail::fmt_double(f));
  }
  s.free_energy_trace.push_back(f);
  return f;
}

inline void svi_run(StructuredPosterior& s, const DynamicTreeModel& model, const FitOptions& options) {
  if (options.max_passes < 1) throw std::invalid_argument("max_passes must be at least 1");
  if (!(options.kl_tolerance > 0.0)) throw std::invalid_argument("kl_tolerance must be positive");
  if (!(options.mu_damping >= 0.0 && options.mu_damping < 1.0)) {
    throw std::invalid_argument("mu_damping must lie in [0, 1)");
  }
  s.converged = false;
  double prev = s.free_energy_trace.empty() ? s.initial_free_energy : s.free_energy_trace.back();
  for (int pass = 0; pass < options.max_passes; ++pass) {
    const double f = svi_pass(s, model, options.mu_damping);
    if (std::abs(f - prev) < options.kl_tolerance) {
      s.converged = true;
      break;
    }
    prev = f;
  }
}

inline StructuredPosterior svi_fit(const DynamicTreeModel& model, const Evidence& evidence,
                                   const FitOptions& options = {}) {
  StructuredPosterior s = svi_init(model, evidence);
  svi_run(s, model, options);
  return s;
}

// Continues fitting `start` (e.g. a previous fit, or a mean-field embedding)
// against `model`; the starting point's F under `model` seeds the trace check.
inline StructuredPosterior svi_fit_from(const DynamicTreeModel& model, StructuredPosterior start,
                                        const FitOptions& options = {}) {
  svi_means_pass(start, model);
  start.initial_free_energy = svi_free_energy(start, model);
  start.free_energy_trace.clear();
  start.diagnostics.clear();
  start.monotone = true;
  svi_run(start, model, options);
  return start;
}

// T_s^k = sum_c mu_cs sum_g Q_cs^{gk} (log(Q_cs^{gk} / P_cs^{gk}) + T_c^g): the
// derivative of the free energy of everything below s with respect to m_s^k,
// for the tables currently held in the state.
inline std::vector<std::vector<double>> svi_downstream_gradient(const StructuredPosterior& s,
                                                                const DynamicTreeModel& model) {
  const int m = model.num_states();
  std::vector<std::vector<double>> t(model.num_nodes(), std::vector<double>(m, 0.0));
  for (int i = model.num_nodes() - 1; i >= 0; --i) {
    for (const ChildLink& link : model.children(i)) {
      const double w = s.mu[link.child][link.entry];
      if (w == 0.0) continue;
      const StateMatrix& q = s.q_tables[link.child][link.entry];
      const Cpt& p = model.edge_cpt(link.child, link.entry);
      for (int k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int g = 0; g < m; ++g) {
          if (q(g, k) <= 0.0) continue;
          acc += q(g, k) * (std::log(q(g, k) / p(g, k)) + t[link.child][g]);
        }
        t[i][k] += w * acc;
      }
    }
  }
  return t;
}

// Per node, the menu entry with the largest mu (lowest index on ties).
inline TreeStructure svi_map_tree(const StructuredPosterior& s) {
  TreeStructure tree{std::vector<int>(s.mu.size(), 0)};
  for (std::size_t i = 0; i < s.mu.size(); ++i) {
    const auto& w = s.mu[i];
    tree.chosen[i] = static_cast<int>(std::max_element(w.begin(), w.end()) - w.begin());
  }
  return tree;
}

// ---------------------------------------------------------------------------
// EM parameter learning on top of the variational E-step.

struct ExpectedCounts {
  std::vector<StateMatrix> cpt_counts;           // per tie class
  std::vector<std::vector<double>> root_counts;  // per top-layer node
  std::vector<std::vector<double>> rho_counts;   // per rho group, per menu slot

  explicit ExpectedCounts(const DynamicTreeModel& model) {
    const int m = model.num_states();
    cpt_counts.assign(model.num_tie_classes(), StateMatrix(m));
    root_counts.assign(model.layer_size(0), std::vector<double>(m, 0.0));
    rho_counts.assign(model.num_rho_groups(), {});
    for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
      rho_counts[model.rho_group(i)].assign(model.menu(i).size(), 0.0);
    }
  }

  ExpectedCounts& operator+=(const ExpectedCounts& o) {
    for (std::size_t c = 0; c < cpt_counts.size(); ++c) {
      auto& a = cpt_counts[c];
      for (int k = 0; k < a.states(); ++k)
        for (int l = 0; l < a.states(); ++l) a(k, l) += o.cpt_counts[c](k, l);
    }
    for (std::size_t i = 0; i < root_counts.size(); ++i)
      for (std::size_t k = 0; k < root_counts[i].size(); ++k) root_counts[i][k] += o.root_counts[i][k];
    for (std::size_t g = 0; g < rho_counts.size(); ++g)
      for (std::size_t e = 0; e < rho_counts[g].size(); ++e) rho_counts[g][e] += o.rho_counts[g][e];
    return *this;
  }
};

// N^{kl} += mu_ij Q_ij^{kl} m_j^l per edge, pooled by tie class; top-node
// means feed the root priors; mu feeds the rho groups slot by slot.
inline ExpectedCounts em_expected_counts(const StructuredPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  ExpectedCounts counts(model);
  for (int i = 0; i < model.num_nodes(); ++i) {
    if (model.is_top(i)) {
      for (int k = 0; k < m; ++k) counts.root_counts[i][k] += s.means[i][k];
      continue;
    }
    const auto menu = model.menu(i);
    auto& slots = counts.rho_counts[model.rho_group(i)];
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const double w = s.mu[i][e];
      slots[e] += w;
      if (w == 0.0) continue;
      const StateMatrix& q = s.q_tables[i][e];
      const auto& pm = s.means[menu[e].parent];
      StateMatrix& acc = counts.cpt_counts[menu[e].cpt];
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) acc(k, l) += w * q(k, l) * pm[l];
    }
  }
  return counts;
}

struct EmOptions {
  int iterations = 5;
  FitOptions fit{};
  bool learn_cpts = true;
  bool learn_rho = true;
  bool learn_root_priors = true;
  double smoothing = 0.0;  // added to every count before normalizing
  int threads = 1;
};

struct EmResult {
  DynamicTreeModel model;
  std::vector<double> total_free_energy;  // after the initial E-step and after each iteration
};

// M-step: renormalize pooled counts. Columns (and groups) without mass keep
// their previous values.
inline DynamicTreeModel em_maximize(const DynamicTreeModel& model, const ExpectedCounts& counts,
                                    const EmOptions& options) {
  ModelSpec spec = model.spec();
  const int m = model.num_states();
  if (options.learn_cpts) {
    for (int c = 0; c < model.num_tie_classes(); ++c) {
      Cpt& target = spec.cpts.at(model.tie_name(c));
      const StateMatrix& n = counts.cpt_counts[c];
      for (int l = 0; l < m; ++l) {
        double total = 0.0;
        for (int k = 0; k < m; ++k) total += n(k, l) + options.smoothing;
        if (!(total > 0.0)) continue;
        for (int k = 0; k < m; ++k) target(k, l) = (n(k, l) + options.smoothing) / total;
      }
    }
  }
  if (options.learn_root_priors) {
    for (std::size_t i = 0; i < spec.root_priors.size(); ++i) {
      std::vector<double> p = counts.root_counts[i];
      for (double& x : p) x += options.smoothing;
      if (normalize(p) > 0.0) spec.root_priors[i] = std::move(p);
    }
  }
  if (options.learn_rho) {
    std::vector<std::vector<double>> group_rho = counts.rho_counts;
    std::vector<bool> usable(group_rho.size());
    for (std::size_t g = 0; g < group_rho.size(); ++g) usable[g] = normalize(group_rho[g]) > 0.0;
    for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
      const int g = model.rho_group(i);
      if (!usable[g]) continue;
      auto& entries = spec.menus[model.spec_menu(i)].entries;
      for (std::size_t e = 0; e < entries.size(); ++e) entries[e].rho = group_rho[g][e];
    }
  }
  return DynamicTreeModel(std::move(spec));
}

namespace detail {

template <typename Fn>
void for_each_case(std::size_t cases, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(cases)));
  if (threads == 1) {
    for (std::size_t c = 0; c < cases; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (std::size_t c = next++; c < cases; c = next++) fn(c);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Variational EM. Each E-step warm-starts every case from its previous
// posterior, so the summed free energy cannot increase across iterations.
inline EmResult em_fit(const DynamicTreeModel& model, const std::vector<Evidence>& dataset,
                       const EmOptions& options = {}) {
  if (dataset.empty()) throw std::invalid_argument("em_fit: empty dataset");
  EmResult result{model, {}};
  std::vector<StructuredPosterior> states(dataset.size());

  auto e_step = [&](bool warm) {
    detail::for_each_case(dataset.size(), options.threads, [&](std::size_t c) {
      states[c] = warm ? svi_fit_from(result.model, std::move(states[c]), options.fit)
                       : svi_fit(result.model, dataset[c], options.fit);
    });
    double total = 0.0;
    for (const auto& s : states) total += s.free_energy_trace.back();
    result.total_free_energy.push_back(total);
  };

  e_step(false);
  for (int it = 0; it < options.iterations; ++it) {
    ExpectedCounts counts(result.model);
    for (const auto& s : states) counts += em_expected_counts(s, result.model);
    result.model = em_maximize(result.model, counts, options);
    e_step(true);
  }
  return result;
}

}  // namespace dyntree
