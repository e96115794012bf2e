#pragma once

// Loopy belief propagation on the multi-parent network obtained by summing
// out the structure: P(x_i = k | parents) = sum_j rho_ij P_ij^{k, x_j}. The
// mixture form keeps every message linear in menu size times m^2.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"

namespace dyntree {

struct LoopyOptions {
  int max_iterations = 200;
  double message_tolerance = 1e-6;  // max-norm change of any message
  double damping = 0.1;             // message <- (1 - d) * update + d * message
};

struct LoopyResult {
  std::vector<std::vector<double>> marginals;
  bool converged = false;
  int iterations_used = 0;
};

// Normalized messages on every menu edge, indexed [node][entry].
struct LoopyMessages {
  std::vector<std::vector<std::vector<double>>> to_child;   // pi message, parent -> node
  std::vector<std::vector<std::vector<double>>> to_parent;  // lambda message, node -> parent

  static LoopyMessages uniform(const DynamicTreeModel& model) {
    const int m = model.num_states();
    LoopyMessages msgs;
    msgs.to_child.resize(model.num_nodes());
    msgs.to_parent.resize(model.num_nodes());
    for (int i = 0; i < model.num_nodes(); ++i) {
      msgs.to_child[i].assign(model.menu(i).size(), std::vector<double>(m, 1.0 / m));
      msgs.to_parent[i].assign(model.menu(i).size(), std::vector<double>(m, 1.0 / m));
    }
    return msgs;
  }
};

namespace detail {

struct LoopyNodeTerms {
  std::vector<std::vector<double>> pi;      // predictive distribution from parents
  std::vector<std::vector<double>> lambda;  // evidence times incoming lambda messages
};

inline LoopyNodeTerms loopy_node_terms(const DynamicTreeModel& model, const Evidence& evidence,
                                       const LoopyMessages& msgs) {
  const int n = model.num_nodes();
  const int m = model.num_states();
  LoopyNodeTerms t;
  t.pi.assign(n, std::vector<double>(m, 0.0));
  t.lambda.assign(n, std::vector<double>(m, 1.0));
  for (int i = 0; i < n; ++i) {
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const Cpt& p = model.cpt(menu[e].cpt);
      if (menu[e].parent == kVirtualRoot) {
        for (int k = 0; k < m; ++k) t.pi[i][k] += menu[e].rho * p(k, 0);
        continue;
      }
      const auto& in = msgs.to_child[i][e];
      for (int k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int l = 0; l < m; ++l) acc += p(k, l) * in[l];
        t.pi[i][k] += menu[e].rho * acc;
      }
    }
    if (const int s = observed_state(model, evidence, i); s != kUnobserved) {
      std::fill(t.lambda[i].begin(), t.lambda[i].end(), 0.0);
      t.lambda[i][s] = 1.0;
    }
    for (const ChildLink& link : model.children(i)) {
      const auto& in = msgs.to_parent[link.child][link.entry];
      for (int k = 0; k < m; ++k) t.lambda[i][k] *= in[k];
    }
  }
  return t;
}

inline double blend(std::vector<double>& current, std::vector<double>& update, double damping) {
  if (normalize(update) <= 0.0) update.assign(update.size(), 1.0 / update.size());
  double change = 0.0;
  for (std::size_t k = 0; k < current.size(); ++k) {
    const double v = (1.0 - damping) * update[k] + damping * current[k];
    change = std::max(change, std::abs(v - current[k]));
    current[k] = v;
  }
  return change;
}

}  // namespace detail

// One synchronous sweep: every message recomputed from the previous iterate,
// then damped. Returns the largest absolute change of any message entry.
inline double loopy_iterate(const DynamicTreeModel& model, const Evidence& evidence, LoopyMessages& msgs,
                            double damping) {
  const int n = model.num_nodes();
  const int m = model.num_states();
  const auto terms = detail::loopy_node_terms(model, evidence, msgs);
  LoopyMessages next = msgs;

  std::vector<double> update(m);
  for (int i = 0; i < n; ++i) {
    const auto menu = model.menu(i);
    // Pi messages into i: parent's predictive times everything it hears except from i.
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const int j = menu[e].parent;
      if (j == kVirtualRoot) continue;
      for (int l = 0; l < m; ++l) update[l] = terms.pi[j][l];
      if (const int s = observed_state(model, evidence, j); s != kUnobserved) {
        for (int l = 0; l < m; ++l)
          if (l != s) update[l] = 0.0;
      }
      for (const ChildLink& link : model.children(j)) {
        if (link.child == i && link.entry == static_cast<int>(e)) continue;
        const auto& in = msgs.to_parent[link.child][link.entry];
        for (int l = 0; l < m; ++l) update[l] *= in[l];
      }
      next.to_child[i][e] = update;
    }
    // Lambda messages out of i. With the other candidates marginalized under
    // their pi messages, parent j sees rho_ij P_ij(., l) plus a constant.
    const auto& lam = terms.lambda[i];
    for (std::size_t e = 0; e < menu.size(); ++e) {
      if (menu[e].parent == kVirtualRoot) continue;
      const Cpt& p = model.cpt(menu[e].cpt);
      const auto& in = msgs.to_child[i][e];
      double others = 0.0;
      for (int k = 0; k < m; ++k) {
        double own = 0.0;
        for (int l = 0; l < m; ++l) own += p(k, l) * in[l];
        others += lam[k] * (terms.pi[i][k] - menu[e].rho * own);
      }
      for (int l = 0; l < m; ++l) {
        double acc = 0.0;
        for (int k = 0; k < m; ++k) acc += lam[k] * p(k, l);
        update[l] = std::max(0.0, menu[e].rho * acc + others);
      }
      next.to_parent[i][e] = update;
    }
  }

  double change = 0.0;
  for (int i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < model.menu(i).size(); ++e) {
      if (model.menu(i)[e].parent == kVirtualRoot) continue;
      change = std::max(change, detail::blend(msgs.to_child[i][e], next.to_child[i][e], damping));
      change = std::max(change, detail::blend(msgs.to_parent[i][e], next.to_parent[i][e], damping));
    }
  }
  return change;
}

// Normalized lambda * pi per node.
inline std::vector<std::vector<double>> loopy_beliefs(const DynamicTreeModel& model, const Evidence& evidence,
                                                      const LoopyMessages& msgs) {
  const auto terms = detail::loopy_node_terms(model, evidence, msgs);
  std::vector<std::vector<double>> out(model.num_nodes());
  for (int i = 0; i < model.num_nodes(); ++i) {
    out[i].resize(model.num_states());
    for (int k = 0; k < model.num_states(); ++k) out[i][k] = terms.lambda[i][k] * terms.pi[i][k];
    if (normalize(out[i]) <= 0.0) {
      out[i] = terms.pi[i];
      normalize(out[i]);
    }
  }
  return out;
}

inline LoopyResult loopy_fit(const DynamicTreeModel& model, const Evidence& evidence,
                             const LoopyOptions& options = {}) {
  if (options.max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
  if (!(options.message_tolerance > 0.0)) throw std::invalid_argument("message_tolerance must be positive");
  if (!(options.damping >= 0.0 && options.damping < 1.0)) throw std::invalid_argument("damping must lie in [0, 1)");
  if (auto errors = validate(model, evidence, false); !errors.empty()) throw ModelError(errors);

  LoopyMessages msgs = LoopyMessages::uniform(model);
  LoopyResult result;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const double change = loopy_iterate(model, evidence, msgs, options.damping);
    result.iterations_used = it;
    if (change < options.message_tolerance) {
      result.converged = true;
      break;
    }
  }
  result.marginals = loopy_beliefs(model, evidence, msgs);
  return result;
}

}  // namespace dyntree
