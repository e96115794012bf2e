#pragma once

// Exact posterior by enumerating every tree structure and weighting the
// per-tree propagation results by P(Z) P(X^E | Z).

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"
#include "dyntree/tree_bp.hpp"

namespace dyntree {

inline constexpr std::uint64_t kTreeCountSaturated = std::numeric_limits<std::uint64_t>::max();

// Product of menu sizes, saturating at kTreeCountSaturated.
inline std::uint64_t tree_count(const DynamicTreeModel& model) {
  std::uint64_t count = 1;
  for (int i = 0; i < model.num_nodes(); ++i) {
    const auto size = static_cast<std::uint64_t>(model.menu(i).size());
    if (count > kTreeCountSaturated / size) return kTreeCountSaturated;
    count *= size;
  }
  return count;
}

// Mixed-radix decoding; the first node in flat order is the fastest digit.
inline TreeStructure tree_from_index(const DynamicTreeModel& model, std::uint64_t index) {
  TreeStructure tree{std::vector<int>(model.num_nodes(), 0)};
  for (int i = 0; i < model.num_nodes(); ++i) {
    const auto size = static_cast<std::uint64_t>(model.menu(i).size());
    tree.chosen[i] = static_cast<int>(index % size);
    index /= size;
  }
  return tree;
}

inline double log_tree_prior(const DynamicTreeModel& model, const TreeStructure& tree) {
  double out = 0.0;
  for (int i = 0; i < model.num_nodes(); ++i) out += std::log(model.menu(i)[tree.chosen[i]].rho);
  return out;
}

class TreeLimitError : public InferenceError {
 public:
  TreeLimitError(std::uint64_t count, std::uint64_t limit)
      : InferenceError("tree count " + (count == kTreeCountSaturated ? std::string("> 2^64") : std::to_string(count)) +
                       " exceeds enumeration limit " + std::to_string(limit)),
        count_(count),
        limit_(limit) {}
  std::uint64_t count() const { return count_; }
  std::uint64_t limit() const { return limit_; }

 private:
  std::uint64_t count_;
  std::uint64_t limit_;
};

struct OracleOptions {
  std::uint64_t limit = 1'000'000;
  std::uint64_t materialize_limit = 100'000;  // keep per-tree weights up to this count
  int threads = 1;
};

struct ExactPosterior {
  double log_evidence = kNegInf;  // log P(X^E)
  std::uint64_t num_trees = 0;
  std::vector<double> tree_posterior;  // P(Z | X^E) by tree index; empty past materialize_limit
  std::vector<std::vector<double>> node_marginals;
  std::vector<std::vector<double>> edge_posterior;  // P(z_ij = 1 | X^E) per node, menu entry
  // P(z_ij = 1, x_i = k, x_j = l | X^E) per node, menu entry.
  std::vector<std::vector<StateMatrix>> edge_pairwise;
};

namespace detail {

// Weighted sums stored relative to exp(max_log).
struct EnumerationSums {
  double max_log = kNegInf;
  double weight = 0.0;
  std::vector<std::vector<double>> marginals;
  std::vector<std::vector<double>> edges;
  std::vector<std::vector<StateMatrix>> pairwise;

  explicit EnumerationSums(const DynamicTreeModel& model) {
    const int n = model.num_nodes();
    const int m = model.num_states();
    marginals.assign(n, std::vector<double>(m, 0.0));
    edges.resize(n);
    pairwise.resize(n);
    for (int i = 0; i < n; ++i) {
      edges[i].assign(model.menu(i).size(), 0.0);
      pairwise[i].assign(model.menu(i).size(), StateMatrix(m));
    }
  }

  void rescale(double factor) {
    weight *= factor;
    for (auto& v : marginals)
      for (double& x : v) x *= factor;
    for (auto& v : edges)
      for (double& x : v) x *= factor;
    for (auto& row : pairwise)
      for (auto& mat : row)
        for (int k = 0; k < mat.states(); ++k)
          for (int l = 0; l < mat.states(); ++l) mat(k, l) *= factor;
  }

  void shift_to(double new_max) {
    if (new_max <= max_log) return;
    if (max_log != kNegInf) rescale(std::exp(max_log - new_max));
    max_log = new_max;
  }

  void add(double log_w, const TreeStructure& tree, const TreeResult& r) {
    if (log_w == kNegInf) return;
    shift_to(log_w);
    const double w = std::exp(log_w - max_log);
    weight += w;
    for (std::size_t i = 0; i < marginals.size(); ++i) {
      for (std::size_t k = 0; k < marginals[i].size(); ++k) marginals[i][k] += w * r.marginals[i][k];
      const int e = tree.chosen[i];
      edges[i][e] += w;
      StateMatrix& acc = pairwise[i][e];
      for (int k = 0; k < acc.states(); ++k)
        for (int l = 0; l < acc.states(); ++l) acc(k, l) += w * r.pairwise[i](k, l);
    }
  }

  void merge(EnumerationSums other) {
    if (other.max_log == kNegInf) return;
    shift_to(other.max_log);
    other.rescale(std::exp(other.max_log - max_log));
    weight += other.weight;
    for (std::size_t i = 0; i < marginals.size(); ++i) {
      for (std::size_t k = 0; k < marginals[i].size(); ++k) marginals[i][k] += other.marginals[i][k];
      for (std::size_t e = 0; e < edges[i].size(); ++e) {
        edges[i][e] += other.edges[i][e];
        StateMatrix& acc = pairwise[i][e];
        for (int k = 0; k < acc.states(); ++k)
          for (int l = 0; l < acc.states(); ++l) acc(k, l) += other.pairwise[i][e](k, l);
      }
    }
  }
};

inline constexpr std::uint64_t kEnumerationChunk = 1024;

}  // namespace detail

// Results depend only on the model and evidence: trees are processed in fixed
// chunks that are merged in chunk order whatever the thread count.
inline ExactPosterior exact_posterior(const DynamicTreeModel& model, const Evidence& evidence,
                                      const OracleOptions& options = {}) {
  const std::uint64_t count = tree_count(model);
  if (count > options.limit) throw TreeLimitError(count, options.limit);
  const bool keep_trees = count <= options.materialize_limit;

  const std::uint64_t chunks = (count + detail::kEnumerationChunk - 1) / detail::kEnumerationChunk;
  std::vector<detail::EnumerationSums> partial(chunks, detail::EnumerationSums(model));
  std::vector<double> log_weights(keep_trees ? count : 0, kNegInf);

  auto run_chunk = [&](std::uint64_t c) {
    const std::uint64_t begin = c * detail::kEnumerationChunk;
    const std::uint64_t end = std::min(count, begin + detail::kEnumerationChunk);
    for (std::uint64_t t = begin; t < end; ++t) {
      const TreeStructure tree = tree_from_index(model, t);
      const TreeResult r = tree_posterior(model, tree, evidence);
      const double log_w = log_tree_prior(model, tree) + r.log_evidence;
      if (keep_trees) log_weights[t] = log_w;
      partial[c].add(log_w, tree, r);
    }
  };

  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(chunks)));
  if (threads == 1) {
    for (std::uint64_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (std::uint64_t c = next++; c < chunks; c = next++) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }

  detail::EnumerationSums total(model);
  for (auto& p : partial) total.merge(std::move(p));
  if (total.weight <= 0.0) throw InferenceError("evidence has zero probability under every tree");

  ExactPosterior out;
  out.num_trees = count;
  out.log_evidence = total.max_log + std::log(total.weight);
  total.rescale(1.0 / total.weight);
  out.node_marginals = std::move(total.marginals);
  out.edge_posterior = std::move(total.edges);
  out.edge_pairwise = std::move(total.pairwise);
  if (keep_trees) {
    out.tree_posterior.resize(count);
    for (std::uint64_t t = 0; t < count; ++t) out.tree_posterior[t] = std::exp(log_weights[t] - out.log_evidence);
  }
  return out;
}

// Indices of the k most probable trees, most probable first (ties by index).
inline std::vector<std::uint64_t> top_trees(const ExactPosterior& post, std::size_t k) {
  std::vector<std::uint64_t> idx(post.tree_posterior.size());
  std::iota(idx.begin(), idx.end(), std::uint64_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::uint64_t a, std::uint64_t b) {
                      return post.tree_posterior[a] > post.tree_posterior[b] ||
                             (post.tree_posterior[a] == post.tree_posterior[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

}  // namespace dyntree
