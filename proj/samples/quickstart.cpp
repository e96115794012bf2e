// Fit a structured posterior to one observation of a small dyadic hierarchy
// and compare its marginals against exact enumeration.

#include <cstdio>

#include "dyntree/dyntree.hpp"

int main() {
  using namespace dyntree;
  const auto model = build_layered_model({1, 2, 4}, 2, ParentPriorSpec::gaussian(), CptSpec::diag(0.9),
                                         RootPriorSpec::uniform());
  const Evidence evidence{{0, 0, 1, 1}};

  const StructuredPosterior fit = svi_fit(model, evidence, {100, 1e-8, 0.0});
  const ExactPosterior exact = exact_posterior(model, evidence);

  std::printf("F = %.6f after %zu passes, -log P(X) = %.6f\n", fit.free_energy_trace.back(),
              fit.free_energy_trace.size(), -exact.log_evidence);
  for (int i = 0; i < model.layer_offset(model.num_layers() - 1); ++i) {
    std::printf("%s  exact %.4f  svi %.4f\n", to_string(model.ref(i)).c_str(), exact.node_marginals[i][0],
                fit.means[i][0]);
  }
  const TreeStructure map = svi_map_tree(fit);
  for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
    const int parent = model.menu(i)[map.chosen[i]].parent;
    std::printf("%s -> %s\n", to_string(model.ref(i)).c_str(), to_string(model.ref(parent)).c_str());
  }
  return 0;
}
