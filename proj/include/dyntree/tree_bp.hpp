#pragma once

// Exact two-pass (lambda up, pi down) propagation on one fixed tree.

#include <vector>

#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"

namespace dyntree {

// Chosen menu entry per node, flat order; top nodes always 0 (virtual root).
struct TreeStructure {
  std::vector<int> chosen;
  bool operator==(const TreeStructure&) const = default;
};

inline int tree_parent(const DynamicTreeModel& model, const TreeStructure& tree, int node) {
  return model.menu(node)[tree.chosen[node]].parent;
}

struct TreeResult {
  std::vector<std::vector<double>> marginals;  // P(x_i | X^E, Z)
  // P(x_i = k, x_parent = l | X^E, Z) per node; top nodes use column 0.
  std::vector<StateMatrix> pairwise;
  double log_evidence = kNegInf;  // log P(X^E | Z)
};

inline TreeResult tree_posterior(const DynamicTreeModel& model, const TreeStructure& tree, const Evidence& evidence) {
  const int n = model.num_nodes();
  const int m = model.num_states();

  std::vector<std::vector<int>> kids(n);
  for (int i = 0; i < n; ++i) {
    const int p = tree_parent(model, tree, i);
    if (p != kVirtualRoot) kids[p].push_back(i);
  }
  auto cpt_of = [&](int i) -> const Cpt& { return model.edge_cpt(i, tree.chosen[i]); };

  // Upward pass. up[i] is the message node i sends to its parent.
  std::vector<std::vector<double>> lambda(n, std::vector<double>(m, 1.0));
  std::vector<std::vector<double>> up(n, std::vector<double>(m, 0.0));
  double log_scale = 0.0;
  bool impossible = false;
  for (int i = n - 1; i >= 0; --i) {
    auto& lam = lambda[i];
    if (const int s = observed_state(model, evidence, i); s != kUnobserved) {
      std::fill(lam.begin(), lam.end(), 0.0);
      lam[s] = 1.0;
    }
    for (int c : kids[i])
      for (int k = 0; k < m; ++k) lam[k] *= up[c][k];
    const double ls = rescale_by_max(lam);
    if (ls == kNegInf) {
      impossible = true;
      continue;
    }
    log_scale += ls;
    const Cpt& p = cpt_of(i);
    for (int l = 0; l < m; ++l) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += p(k, l) * lam[k];
      up[i][l] = acc;
    }
    const double us = rescale_by_max(up[i]);
    if (us == kNegInf) {
      impossible = true;
      continue;
    }
    log_scale += us;
  }

  TreeResult result;
  result.marginals.assign(n, std::vector<double>(m, 0.0));
  result.pairwise.assign(n, StateMatrix(m));
  if (!impossible) {
    result.log_evidence = log_scale;
    for (int i = 0; i < model.layer_size(0); ++i) result.log_evidence += std::log(up[i][0]);
  }

  // Downward pass. down[i] is the (normalized) message the parent sends to i.
  std::vector<std::vector<double>> pi(n, std::vector<double>(m, 0.0));
  std::vector<std::vector<double>> down(n, std::vector<double>(m, 0.0));
  for (int i = 0; i < n; ++i) {
    const Cpt& p = cpt_of(i);
    const int parent = tree_parent(model, tree, i);
    if (parent == kVirtualRoot) {
      down[i].assign(m, 0.0);
      down[i][0] = 1.0;
    }
    for (int k = 0; k < m; ++k) {
      double acc = 0.0;
      for (int l = 0; l < m; ++l) acc += p(k, l) * down[i][l];
      pi[i][k] = acc;
    }
    normalize(pi[i]);

    auto& marg = result.marginals[i];
    for (int k = 0; k < m; ++k) marg[k] = pi[i][k] * lambda[i][k];
    if (normalize(marg) <= 0.0) marg = pi[i];
    if (const int s = observed_state(model, evidence, i); s != kUnobserved) {
      std::fill(marg.begin(), marg.end(), 0.0);
      marg[s] = 1.0;
    }

    StateMatrix& joint = result.pairwise[i];
    double total = 0.0;
    for (int k = 0; k < m; ++k)
      for (int l = 0; l < m; ++l) total += (joint(k, l) = lambda[i][k] * p(k, l) * down[i][l]);
    if (total > 0.0) {
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) joint(k, l) /= total;
    }

    // Messages to children: everything known at i except the child's own upward message.
    for (int c : kids[i]) {
      auto& msg = down[c];
      for (int l = 0; l < m; ++l) {
        double v = pi[i][l];
        if (const int s = observed_state(model, evidence, i); s != kUnobserved && s != l) v = 0.0;
        for (int other : kids[i])
          if (other != c) v *= up[other][l];
        msg[l] = v;
      }
      if (normalize(msg) <= 0.0) msg = pi[i];
    }
  }
  return result;
}

}  // namespace dyntree
