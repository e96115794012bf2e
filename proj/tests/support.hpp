#pragma once

// Shared fixtures for the test suite: random model generation and a
// brute-force enumerator over every (tree, state) assignment that serves as
// the independent reference for tree_bp, the oracle and the bounds.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dyntree/dyntree.hpp"

namespace dyntree::testing {

struct RandomShape {
  int min_layers = 2;
  int max_layers = 3;
  int max_width = 3;
  int min_states = 2;
  int max_states = 3;
  int max_menu = 2;
  bool singleton_menus = false;
  bool per_edge_cpts = true;
};

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1)) % (hi - lo + 1);
}

inline std::vector<double> random_distribution(Rng& rng, int n, double floor = 0.05) {
  std::vector<double> p(n);
  for (double& x : p) x = floor + uniform01(rng);
  normalize(p);
  return p;
}

inline Cpt random_cpt(Rng& rng, int m) {
  Cpt c(m);
  for (int l = 0; l < m; ++l) {
    const auto col = random_distribution(rng, m);
    for (int k = 0; k < m; ++k) c(k, l) = col[k];
  }
  return c;
}

// Arbitrary layered model: random widths, random menus (distinct parents in
// the layer above), random rho, random tables and root priors.
inline DynamicTreeModel random_model(Rng& rng, const RandomShape& shape = {}) {
  ModelSpec spec;
  spec.num_states = uniform_int(rng, shape.min_states, shape.max_states);
  const int layers = uniform_int(rng, shape.min_layers, shape.max_layers);
  for (int d = 0; d < layers; ++d) {
    const int width = uniform_int(rng, 1, shape.max_width);
    spec.layer_sizes.push_back(width);
    spec.positions.push_back(uniform_layer_positions(width));
  }
  for (int i = 0; i < spec.layer_sizes[0]; ++i) spec.root_priors.push_back(random_distribution(rng, spec.num_states));
  for (int d = 1; d < layers; ++d) {
    const int above = spec.layer_sizes[d - 1];
    if (!shape.per_edge_cpts) spec.cpts[layer_tie_name(d)] = random_cpt(rng, spec.num_states);
    for (int i = 0; i < spec.layer_sizes[d]; ++i) {
      Menu menu;
      menu.child = {d, i};
      const int size = shape.singleton_menus ? 1 : uniform_int(rng, 1, std::min(above, shape.max_menu));
      std::vector<int> pool(above);
      for (int j = 0; j < above; ++j) pool[j] = j;
      for (int j = above - 1; j > 0; --j) std::swap(pool[j], pool[uniform_int(rng, 0, j)]);
      const auto rho = random_distribution(rng, size, 0.2);
      for (int e = 0; e < size; ++e) {
        std::string tie = layer_tie_name(d);
        if (shape.per_edge_cpts) {
          tie += "/" + std::to_string(i) + "/" + std::to_string(e);
          spec.cpts[tie] = random_cpt(rng, spec.num_states);
        }
        menu.entries.push_back({{d - 1, pool[e]}, rho[e], tie});
      }
      // rho must sum to 1 within the model tolerance; absorb rounding in the last entry
      double rest = 1.0;
      for (int e = 0; e + 1 < size; ++e) rest -= menu.entries[e].rho;
      menu.entries.back().rho = rest;
      spec.menus.push_back(std::move(menu));
    }
  }
  return DynamicTreeModel(std::move(spec));
}

inline Evidence sampled_evidence(const DynamicTreeModel& model, Rng& rng) {
  return leaf_evidence(model, sample_prior(model, rng));
}

// Exhaustive sums over every tree and every joint state, using only
// log_joint and tree_from_index.
struct BruteForce {
  double log_evidence = kNegInf;
  std::vector<std::vector<double>> node_marginals;
  std::vector<std::vector<double>> edge_posterior;
};

inline BruteForce brute_force(const DynamicTreeModel& model, const Evidence& evidence) {
  const int n = model.num_nodes();
  const int m = model.num_states();
  const int first_leaf = model.layer_offset(model.num_layers() - 1);
  const std::uint64_t trees = tree_count(model);

  std::vector<double> weights;
  std::vector<std::vector<int>> tree_of;
  std::vector<std::vector<int>> states_of;
  Assignment a;
  a.states.assign(n, 0);
  for (std::uint64_t t = 0; t < trees; ++t) {
    a.tree = tree_from_index(model, t).chosen;
    std::vector<int> hidden_states(first_leaf, 0);
    while (true) {
      for (int i = 0; i < first_leaf; ++i) a.states[i] = hidden_states[i];
      for (int i = first_leaf; i < n; ++i) a.states[i] = evidence.states[i - first_leaf];
      weights.push_back(log_joint(model, a));
      tree_of.push_back(a.tree);
      states_of.push_back(a.states);
      int pos = 0;
      while (pos < first_leaf && ++hidden_states[pos] == m) hidden_states[pos++] = 0;
      if (pos == first_leaf) break;
    }
  }
  BruteForce out;
  out.log_evidence = log_sum_exp(weights);
  out.node_marginals.assign(n, std::vector<double>(m, 0.0));
  out.edge_posterior.resize(n);
  for (int i = 0; i < n; ++i) out.edge_posterior[i].assign(model.menu(i).size(), 0.0);
  for (std::size_t r = 0; r < weights.size(); ++r) {
    const double w = std::exp(weights[r] - out.log_evidence);
    for (int i = 0; i < n; ++i) {
      out.node_marginals[i][states_of[r][i]] += w;
      out.edge_posterior[i][tree_of[r][i]] += w;
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) worst = std::max(worst, std::abs(a[i][k] - b[i][k]));
  return worst;
}

// Forward-only means from arbitrary (unnormalized) starting means of the
// layer of `node`, for the downstream free energy below that layer.
inline double downstream_energy(const StructuredPosterior& base, const DynamicTreeModel& model, int node, int k, double delta) {
  const int m = model.num_states();
  auto means = base.means;
  means[node][k] += delta;
  const int layer = model.layer_of(node);
  for (int i = model.layer_offset(layer + 1 < model.num_layers() ? layer + 1 : layer); i < model.num_nodes(); ++i) {
    if (model.layer_of(i) <= layer) continue;
    if (base.observed[i] != kUnobserved) continue;
    std::vector<double> out(m, 0.0);
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e)
      for (int a = 0; a < m; ++a)
        for (int l = 0; l < m; ++l) out[a] += base.mu[i][e] * base.q_tables[i][e](a, l) * means[menu[e].parent][l];
    means[i] = out;
  }
  double v = 0.0;
  for (int i = 0; i < model.num_nodes(); ++i) {
    if (model.layer_of(i) <= layer) continue;
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      const Cpt& p = model.cpt(menu[e].cpt);
      for (int l = 0; l < m; ++l)
        for (int a = 0; a < m; ++a) {
          const double q = base.q_tables[i][e](a, l);
          if (q > 0.0) v += base.mu[i][e] * means[menu[e].parent][l] * q * std::log(q / p(a, l));
        }
    }
  }
  return v;
}

inline double mean_abs_cpt_error(const DynamicTreeModel& a, const DynamicTreeModel& b) {
  double total = 0.0;
  int count = 0;
  for (const auto& [name, cpt] : a.spec().cpts) {
    const Cpt& other = b.spec().cpts.at(name);
    for (std::size_t c = 0; c < cpt.data().size(); ++c) {
      total += std::abs(cpt.data()[c] - other.data()[c]);
      ++count;
    }
  }
  return total / count;
}

inline std::vector<Evidence> sample_dataset(const DynamicTreeModel& model, Rng& rng, int n) {
  std::vector<Evidence> out;
  for (int c = 0; c < n; ++c) out.push_back(sampled_evidence(model, rng));
  return out;
}

}  // namespace dyntree::testing
