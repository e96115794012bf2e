#pragma once

// Layered dynamic tree model: every non-top node picks one parent from a menu
// of candidates in the layer above (prior probabilities rho), and node states
// follow column-stochastic conditional tables along the chosen edges.

#include <algorithm>
#include <cmath>
#include <compare>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dyntree/numeric.hpp"

namespace dyntree {

inline constexpr double kStochasticTolerance = 1e-12;
inline constexpr int kVirtualRoot = -1;
inline constexpr int kUnobserved = -1;

struct NodeRef {
  int layer = 0;
  int index = 0;
  auto operator<=>(const NodeRef&) const = default;
};

inline std::string to_string(NodeRef r) {
  return "(" + std::to_string(r.layer) + "," + std::to_string(r.index) + ")";
}

struct Position {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Position&) const = default;
};

// Square m x m matrix over node states. Entry (k, l) of a conditional table is
// P(child = k | parent = l), so columns are distributions.
class StateMatrix {
 public:
  StateMatrix() = default;
  explicit StateMatrix(int states, double fill = 0.0)
      : states_(states), data_(static_cast<std::size_t>(states) * states, fill) {}

  static StateMatrix identity(int states) {
    StateMatrix out(states);
    for (int k = 0; k < states; ++k) out(k, k) = 1.0;
    return out;
  }
  static StateMatrix uniform(int states) { return StateMatrix(states, 1.0 / states); }
  // `diag` on the diagonal, the remainder spread evenly over each column.
  static StateMatrix diagonal(int states, double diag) {
    StateMatrix out(states, (1.0 - diag) / (states - 1));
    for (int k = 0; k < states; ++k) out(k, k) = diag;
    return out;
  }
  static StateMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const int m = static_cast<int>(rows.size());
    StateMatrix out(m);
    for (int k = 0; k < m; ++k) {
      if (static_cast<int>(rows[k].size()) != m) {
        throw std::invalid_argument("state matrix rows must be square");
      }
      for (int l = 0; l < m; ++l) out(k, l) = rows[k][l];
    }
    return out;
  }

  int states() const { return states_; }
  double operator()(int k, int l) const { return data_[static_cast<std::size_t>(k) * states_ + l]; }
  double& operator()(int k, int l) { return data_[static_cast<std::size_t>(k) * states_ + l]; }

  double column_sum(int l) const {
    double s = 0.0;
    for (int k = 0; k < states_; ++k) s += (*this)(k, l);
    return s;
  }
  void normalize_columns() {
    for (int l = 0; l < states_; ++l) {
      const double s = column_sum(l);
      if (s > 0.0) {
        for (int k = 0; k < states_; ++k) (*this)(k, l) /= s;
      }
    }
  }
  std::vector<std::vector<double>> rows() const {
    std::vector<std::vector<double>> out(states_, std::vector<double>(states_));
    for (int k = 0; k < states_; ++k)
      for (int l = 0; l < states_; ++l) out[k][l] = (*this)(k, l);
    return out;
  }
  const std::vector<double>& data() const { return data_; }
  bool operator==(const StateMatrix&) const = default;

 private:
  int states_ = 0;
  std::vector<double> data_;
};

using Cpt = StateMatrix;

struct MenuEntry {
  NodeRef parent;
  double rho = 1.0;
  std::string tie;  // conditional-table class shared by tied edges
};

struct Menu {
  NodeRef child;
  std::vector<MenuEntry> entries;
  std::string rho_group;  // empty: the menu is its own group
};

// Plain-data description of a model, mirroring the model file.
struct ModelSpec {
  int num_states = 2;
  std::vector<int> layer_sizes;
  std::vector<std::vector<Position>> positions;  // per layer
  std::vector<std::vector<double>> root_priors;  // per top-layer node
  std::vector<Menu> menus;                       // one per non-top node
  std::map<std::string, Cpt> cpts;               // keyed by tie class
};

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string out = "invalid model";
    for (const auto& e : errors) out += "\n  " + e;
    return out;
  }
  std::vector<std::string> errors_;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline bool is_distribution(std::span<const double> p) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= kStochasticTolerance;
}

}  // namespace detail

// Every violated invariant, one message per problem. Never throws.
inline std::vector<std::string> validate(const ModelSpec& spec) {
  std::vector<std::string> errors;
  auto err = [&](std::string msg) { errors.push_back(std::move(msg)); };

  if (spec.num_states < 2) err("num_states: must be at least 2, got " + std::to_string(spec.num_states));
  if (spec.layer_sizes.empty()) err("layers: at least one layer required");
  for (std::size_t d = 0; d < spec.layer_sizes.size(); ++d) {
    if (spec.layer_sizes[d] <= 0) err("layers[" + std::to_string(d) + "]: size must be positive");
  }
  if (!errors.empty()) return errors;

  const int m = spec.num_states;
  const int num_layers = static_cast<int>(spec.layer_sizes.size());
  auto in_range = [&](NodeRef r) {
    return r.layer >= 0 && r.layer < num_layers && r.index >= 0 && r.index < spec.layer_sizes[r.layer];
  };

  if (spec.positions.size() != spec.layer_sizes.size()) {
    err("positions: expected one entry per layer");
  } else {
    for (int d = 0; d < num_layers; ++d) {
      if (static_cast<int>(spec.positions[d].size()) != spec.layer_sizes[d]) {
        err("positions[" + std::to_string(d) + "]: expected " + std::to_string(spec.layer_sizes[d]) + " positions");
      }
    }
  }

  if (static_cast<int>(spec.root_priors.size()) != spec.layer_sizes[0]) {
    err("root_priors: expected " + std::to_string(spec.layer_sizes[0]) + " vectors, got " +
        std::to_string(spec.root_priors.size()));
  } else {
    for (std::size_t i = 0; i < spec.root_priors.size(); ++i) {
      const auto& p = spec.root_priors[i];
      if (static_cast<int>(p.size()) != m) {
        err("root_priors[" + std::to_string(i) + "]: expected length " + std::to_string(m));
      } else if (!detail::is_distribution(p)) {
        err("root_priors[" + std::to_string(i) + "]: not a probability vector (sum " +
            detail::fmt_double(sum_of(p)) + ")");
      }
    }
  }

  std::map<std::string, std::string> first_edge_of_tie;
  std::map<NodeRef, int> menu_count;
  std::map<std::string, std::size_t> group_size;
  for (const Menu& menu : spec.menus) {
    const std::string who = "menus: node " + to_string(menu.child);
    if (!in_range(menu.child)) {
      err(who + ": no such node");
      continue;
    }
    if (menu.child.layer == 0) {
      err(who + ": top-layer nodes take root priors, not menus");
      continue;
    }
    ++menu_count[menu.child];
    if (menu.entries.empty()) {
      err(who + ": empty parent menu");
      continue;
    }
    double rho_sum = 0.0;
    bool rho_ok = true;
    std::vector<NodeRef> seen;
    for (const MenuEntry& e : menu.entries) {
      if (!in_range(e.parent) || e.parent.layer != menu.child.layer - 1) {
        err(who + ": parent " + to_string(e.parent) + " is not in the layer above");
      }
      if (std::find(seen.begin(), seen.end(), e.parent) != seen.end()) {
        err(who + ": parent " + to_string(e.parent) + " listed twice");
      }
      seen.push_back(e.parent);
      if (!(e.rho >= 0.0)) rho_ok = false;
      rho_sum += e.rho;
      if (!spec.cpts.contains(e.tie)) {
        err(who + ": edge from " + to_string(e.parent) + " uses unknown cpt tie class '" + e.tie + "'");
      } else if (!first_edge_of_tie.contains(e.tie)) {
        first_edge_of_tie[e.tie] = to_string(e.parent) + "->" + to_string(menu.child);
      }
    }
    if (!rho_ok || std::abs(rho_sum - 1.0) > kStochasticTolerance) {
      err(who + ": rho values sum to " + detail::fmt_double(rho_sum) + ", expected 1");
    }
    if (!menu.rho_group.empty()) {
      auto [it, inserted] = group_size.emplace(menu.rho_group, menu.entries.size());
      if (!inserted && it->second != menu.entries.size()) {
        err(who + ": rho group '" + menu.rho_group + "' mixes menus of different sizes");
      }
    }
  }
  for (int d = 1; d < num_layers; ++d) {
    for (int i = 0; i < spec.layer_sizes[d]; ++i) {
      const int count = menu_count[NodeRef{d, i}];
      if (count == 0) err("menus: node " + to_string(NodeRef{d, i}) + " has no parent menu");
      if (count > 1) err("menus: node " + to_string(NodeRef{d, i}) + " has more than one menu");
    }
  }

  for (const auto& [name, cpt] : spec.cpts) {
    auto edge_note = [&]() {
      auto it = first_edge_of_tie.find(name);
      return it == first_edge_of_tie.end() ? std::string() : " (edge " + it->second + ")";
    };
    if (cpt.states() != m) {
      err("cpts['" + name + "']" + edge_note() + ": expected " + std::to_string(m) + "x" + std::to_string(m));
      continue;
    }
    for (int l = 0; l < m; ++l) {
      bool nonneg = true;
      for (int k = 0; k < m; ++k) nonneg = nonneg && cpt(k, l) >= 0.0;
      const double s = cpt.column_sum(l);
      if (!nonneg || std::abs(s - 1.0) > kStochasticTolerance) {
        err("cpts['" + name + "']" + edge_note() + ": column " + std::to_string(l) + " sums to " +
            detail::fmt_double(s) + (nonneg ? "" : " or has negative entries"));
      }
    }
  }
  return errors;
}

// A conditional edge as seen by the inference code. Top-layer nodes have a
// single edge to a virtual one-state root whose table repeats the root prior
// in every column, so all propagation rules apply without special cases.
struct Edge {
  int parent = kVirtualRoot;  // flat node index
  double rho = 1.0;
  int cpt = 0;  // index into DynamicTreeModel::cpt
};

struct ChildLink {
  int child = 0;
  int entry = 0;  // position of the edge in the child's menu
};

// Validated, immutable model with flat node indices (layer-major, top first).
class DynamicTreeModel {
 public:
  explicit DynamicTreeModel(ModelSpec spec) : spec_(std::move(spec)) {
    if (auto errors = validate(spec_); !errors.empty()) throw ModelError(std::move(errors));
    index();
  }

  const ModelSpec& spec() const { return spec_; }
  int num_states() const { return spec_.num_states; }
  int num_layers() const { return static_cast<int>(spec_.layer_sizes.size()); }
  int layer_size(int layer) const { return spec_.layer_sizes[layer]; }
  int layer_offset(int layer) const { return offsets_[layer]; }
  int num_nodes() const { return offsets_.back(); }

  int node(NodeRef r) const { return offsets_[r.layer] + r.index; }
  int layer_of(int node) const { return layer_of_[node]; }
  NodeRef ref(int node) const { return {layer_of_[node], node - offsets_[layer_of_[node]]}; }
  bool is_top(int node) const { return layer_of_[node] == 0; }
  bool is_bottom(int node) const { return layer_of_[node] == num_layers() - 1; }
  const Position& position(int node) const {
    const NodeRef r = ref(node);
    return spec_.positions[r.layer][r.index];
  }

  std::span<const Edge> menu(int node) const { return menus_[node]; }
  std::span<const ChildLink> children(int node) const { return children_[node]; }

  const Cpt& cpt(int index) const { return cpts_[index]; }
  const Cpt& edge_cpt(int node, int entry) const { return cpts_[menus_[node][entry].cpt]; }
  // Tie classes occupy indices [0, num_tie_classes()); root tables follow.
  int num_tie_classes() const { return static_cast<int>(tie_names_.size()); }
  const std::string& tie_name(int index) const { return tie_names_[index]; }
  int tie_index(const std::string& name) const {
    auto it = std::find(tie_names_.begin(), tie_names_.end(), name);
    return it == tie_names_.end() ? -1 : static_cast<int>(it - tie_names_.begin());
  }
  const std::vector<double>& root_prior(int top_index) const { return spec_.root_priors[top_index]; }

  int num_rho_groups() const { return static_cast<int>(rho_group_names_.size()); }
  int rho_group(int node) const { return rho_group_[node]; }
  const std::string& rho_group_name(int group) const { return rho_group_names_[group]; }

  // Menu index into spec().menus for a non-top node.
  int spec_menu(int node) const { return spec_menu_[node]; }

 private:
  void index() {
    const int m = spec_.num_states;
    offsets_.assign(1, 0);
    for (int size : spec_.layer_sizes) offsets_.push_back(offsets_.back() + size);
    const int n = offsets_.back();
    layer_of_.resize(n);
    for (int d = 0; d < num_layers(); ++d)
      for (int i = offsets_[d]; i < offsets_[d + 1]; ++i) layer_of_[i] = d;

    for (const auto& [name, cpt] : spec_.cpts) {
      tie_names_.push_back(name);
      cpts_.push_back(cpt);
    }
    menus_.assign(n, {});
    children_.assign(n, {});
    spec_menu_.assign(n, -1);
    rho_group_.assign(n, -1);
    for (int i = 0; i < spec_.layer_sizes[0]; ++i) {
      Cpt root(m);
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) root(k, l) = spec_.root_priors[i][k];
      menus_[i].push_back(Edge{kVirtualRoot, 1.0, static_cast<int>(cpts_.size())});
      cpts_.push_back(std::move(root));
    }
    std::map<std::string, int> groups;
    for (std::size_t mi = 0; mi < spec_.menus.size(); ++mi) {
      const Menu& menu = spec_.menus[mi];
      const int child = node(menu.child);
      spec_menu_[child] = static_cast<int>(mi);
      for (const MenuEntry& e : menu.entries) {
        const int entry = static_cast<int>(menus_[child].size());
        menus_[child].push_back(Edge{node(e.parent), e.rho, tie_index(e.tie)});
        children_[node(e.parent)].push_back(ChildLink{child, entry});
      }
    }
    // Children lists in flat child order for deterministic sweeps.
    for (auto& links : children_) {
      std::sort(links.begin(), links.end(),
                [](const ChildLink& a, const ChildLink& b) { return a.child < b.child || (a.child == b.child && a.entry < b.entry); });
    }
    for (int i = spec_.layer_sizes[0]; i < n; ++i) {
      const Menu& menu = spec_.menus[spec_menu_[i]];
      const std::string name = menu.rho_group.empty() ? "node" + to_string(ref(i)) : menu.rho_group;
      auto [it, inserted] = groups.emplace(name, static_cast<int>(rho_group_names_.size()));
      if (inserted) rho_group_names_.push_back(name);
      rho_group_[i] = it->second;
    }
  }

  ModelSpec spec_;
  std::vector<int> offsets_;
  std::vector<int> layer_of_;
  std::vector<std::vector<Edge>> menus_;
  std::vector<std::vector<ChildLink>> children_;
  std::vector<Cpt> cpts_;
  std::vector<std::string> tie_names_;
  std::vector<int> spec_menu_;
  std::vector<int> rho_group_;
  std::vector<std::string> rho_group_names_;
};

inline std::vector<std::string> validate(const DynamicTreeModel& model) { return validate(model.spec()); }

// Observed leaf states, one entry per bottom-layer node (kUnobserved allowed
// inside the library; files always carry complete evidence).
struct Evidence {
  std::vector<int> states;
  bool operator==(const Evidence&) const = default;
};

inline std::vector<std::string> validate(const DynamicTreeModel& model, const Evidence& evidence,
                                         bool require_complete = true) {
  std::vector<std::string> errors;
  const int leaves = model.layer_size(model.num_layers() - 1);
  if (static_cast<int>(evidence.states.size()) != leaves) {
    errors.push_back("evidence: expected " + std::to_string(leaves) + " leaf states, got " +
                     std::to_string(evidence.states.size()));
    return errors;
  }
  for (int i = 0; i < leaves; ++i) {
    const int s = evidence.states[i];
    if (s == kUnobserved && !require_complete) continue;
    if (s < 0 || s >= model.num_states()) {
      errors.push_back("evidence: leaf " + std::to_string(i) + " has invalid state " + std::to_string(s));
    }
  }
  return errors;
}

// Observed state of a node, or kUnobserved for hidden nodes.
inline int observed_state(const DynamicTreeModel& model, const Evidence& evidence, int node) {
  if (!model.is_bottom(node)) return kUnobserved;
  return evidence.states[node - model.layer_offset(model.num_layers() - 1)];
}

// A full sample (Z, X): chosen menu entry per node (0 for top nodes) and states.
struct Assignment {
  std::vector<int> tree;
  std::vector<int> states;
};

inline Evidence leaf_evidence(const DynamicTreeModel& model, const Assignment& a) {
  const int first = model.layer_offset(model.num_layers() - 1);
  return Evidence{std::vector<int>(a.states.begin() + first, a.states.end())};
}

// ---------------------------------------------------------------------------
// Construction helpers.

// rho_c proportional to exp(-d^2 / (2 sigma^2)), d the distance between positions.
inline std::vector<double> gaussian_parent_prior(Position child, std::span<const Position> candidates, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_parent_prior: sigma must be positive");
  if (candidates.empty()) throw std::invalid_argument("gaussian_parent_prior: no candidates");
  std::vector<double> w(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double dx = candidates[c].x - child.x;
    const double dy = candidates[c].y - child.y;
    w[c] = -(dx * dx + dy * dy) / (2.0 * sigma * sigma);
  }
  softmax_in_place(w);
  return w;
}

// Normalizes the columns of weight * I + noise.
inline Cpt strong_diagonal_cpt(const StateMatrix& noise, double weight = 3.0) {
  Cpt out = noise;
  for (int k = 0; k < out.states(); ++k) out(k, k) += weight;
  out.normalize_columns();
  return out;
}

inline Cpt random_strong_diagonal_cpt(int num_states, Rng& rng, double weight = 3.0) {
  if (num_states < 2) throw std::invalid_argument("random_strong_diagonal_cpt: need at least 2 states");
  StateMatrix noise(num_states);
  for (int k = 0; k < num_states; ++k)
    for (int l = 0; l < num_states; ++l) noise(k, l) = uniform01(rng);
  return strong_diagonal_cpt(noise, weight);
}

struct ParentPriorSpec {
  enum class Kind {
    kNearest,        // single parent: the closest node in the layer above
    kAboveAndRight,  // closest parent plus its right neighbour (cyclic)
    kGaussian,       // whole layer above, Gaussian decay in distance
  };
  Kind kind = Kind::kNearest;
  double above_weight = 0.6;
  double sigma_factor = 3.0;  // sigma = factor * spacing of the parent layer

  static ParentPriorSpec nearest() { return {}; }
  static ParentPriorSpec above_and_right(double above = 0.6) { return {Kind::kAboveAndRight, above, 3.0}; }
  static ParentPriorSpec gaussian(double factor = 3.0) { return {Kind::kGaussian, 0.6, factor}; }
};

struct CptSpec {
  enum class Kind { kIdentity, kUniform, kDiagonal, kRandomStrongDiagonal, kExplicit };
  Kind kind = Kind::kDiagonal;
  double diagonal = 0.9;         // kDiagonal
  double diagonal_weight = 3.0;  // kRandomStrongDiagonal
  Cpt matrix;                    // kExplicit
  bool per_edge = false;         // one class per edge instead of per child layer

  static CptSpec of(Kind kind) {
    CptSpec c;
    c.kind = kind;
    return c;
  }
  static CptSpec identity() { return of(Kind::kIdentity); }
  static CptSpec uniform() { return of(Kind::kUniform); }
  static CptSpec diag(double d) {
    CptSpec c = of(Kind::kDiagonal);
    c.diagonal = d;
    return c;
  }
  static CptSpec random_strong_diagonal(double weight = 3.0) {
    CptSpec c = of(Kind::kRandomStrongDiagonal);
    c.diagonal_weight = weight;
    return c;
  }
  static CptSpec explicit_table(Cpt m) {
    CptSpec c = of(Kind::kExplicit);
    c.matrix = std::move(m);
    return c;
  }
};

struct RootPriorSpec {
  std::vector<double> prior;  // empty: uniform
  static RootPriorSpec uniform() { return {}; }
  static RootPriorSpec explicit_prior(std::vector<double> p) { return {std::move(p)}; }
};

// Positions evenly spread over the unit interval, one cell per node.
inline std::vector<Position> uniform_layer_positions(int size) {
  std::vector<Position> out(size);
  for (int i = 0; i < size; ++i) out[i].x = (i + 0.5) / size;
  return out;
}

inline std::string layer_tie_name(int layer) { return "layer" + std::to_string(layer); }

// Assembles and validates a layered model. Random table kinds draw from `rng`
// in child-layer order; a null rng with a random kind is an error.
inline DynamicTreeModel build_layered_model(const std::vector<int>& layer_sizes, int num_states,
                                            const ParentPriorSpec& parents, const CptSpec& cpts,
                                            const RootPriorSpec& roots, Rng* rng = nullptr) {
  if (layer_sizes.empty()) throw ModelError({"layers: at least one layer required"});
  if (num_states < 2) throw ModelError({"num_states: must be at least 2"});
  for (int size : layer_sizes) {
    if (size <= 0) throw ModelError({"layers: sizes must be positive"});
  }
  ModelSpec spec;
  spec.num_states = num_states;
  spec.layer_sizes = layer_sizes;
  for (int size : layer_sizes) spec.positions.push_back(uniform_layer_positions(size));

  std::vector<double> root = roots.prior.empty() ? std::vector<double>(num_states, 1.0 / num_states) : roots.prior;
  spec.root_priors.assign(layer_sizes[0], root);

  auto make_cpt = [&]() -> Cpt {
    switch (cpts.kind) {
      case CptSpec::Kind::kIdentity: return Cpt::identity(num_states);
      case CptSpec::Kind::kUniform: return Cpt::uniform(num_states);
      case CptSpec::Kind::kDiagonal: return Cpt::diagonal(num_states, cpts.diagonal);
      case CptSpec::Kind::kRandomStrongDiagonal:
        if (rng == nullptr) throw ModelError({"cpts: random tables need a random generator"});
        return random_strong_diagonal_cpt(num_states, *rng, cpts.diagonal_weight);
      case CptSpec::Kind::kExplicit: return cpts.matrix;
    }
    return Cpt::uniform(num_states);
  };

  for (int d = 1; d < static_cast<int>(layer_sizes.size()); ++d) {
    const auto& here = spec.positions[d];
    const auto& above = spec.positions[d - 1];
    const int n_above = layer_sizes[d - 1];
    if (!cpts.per_edge) spec.cpts[layer_tie_name(d)] = make_cpt();
    for (int i = 0; i < layer_sizes[d]; ++i) {
      Menu menu;
      menu.child = {d, i};
      int nearest = 0;
      for (int j = 1; j < n_above; ++j) {
        if (std::abs(above[j].x - here[i].x) < std::abs(above[nearest].x - here[i].x)) nearest = j;
      }
      switch (parents.kind) {
        case ParentPriorSpec::Kind::kNearest:
          menu.entries.push_back({{d - 1, nearest}, 1.0, ""});
          break;
        case ParentPriorSpec::Kind::kAboveAndRight: {
          const int right = (nearest + 1) % n_above;
          if (right == nearest) {
            menu.entries.push_back({{d - 1, nearest}, 1.0, ""});
          } else {
            menu.entries.push_back({{d - 1, nearest}, parents.above_weight, ""});
            menu.entries.push_back({{d - 1, right}, 1.0 - parents.above_weight, ""});
          }
          break;
        }
        case ParentPriorSpec::Kind::kGaussian: {
          const double sigma = parents.sigma_factor / n_above;
          const auto rho = gaussian_parent_prior(here[i], above, sigma);
          for (int j = 0; j < n_above; ++j) menu.entries.push_back({{d - 1, j}, rho[j], ""});
          break;
        }
      }
      for (std::size_t e = 0; e < menu.entries.size(); ++e) {
        if (cpts.per_edge) {
          const std::string name = layer_tie_name(d) + "/" + std::to_string(i) + "/" + std::to_string(e);
          spec.cpts[name] = make_cpt();
          menu.entries[e].tie = name;
        } else {
          menu.entries[e].tie = layer_tie_name(d);
        }
      }
      spec.menus.push_back(std::move(menu));
    }
  }
  return DynamicTreeModel(std::move(spec));
}

// ---------------------------------------------------------------------------
// Prior sampling and joint probability.

inline Assignment sample_prior(const DynamicTreeModel& model, Rng& rng) {
  const int n = model.num_nodes();
  const int m = model.num_states();
  Assignment a{std::vector<int>(n, 0), std::vector<int>(n, 0)};
  std::vector<double> w;
  for (int i = 0; i < n; ++i) {
    const auto menu = model.menu(i);
    w.resize(menu.size());
    for (std::size_t e = 0; e < menu.size(); ++e) w[e] = menu[e].rho;
    a.tree[i] = sample_index(w, rng);
  }
  std::vector<double> column(m);
  for (int i = 0; i < n; ++i) {
    const Edge& edge = model.menu(i)[a.tree[i]];
    const int parent_state = edge.parent == kVirtualRoot ? 0 : a.states[edge.parent];
    const Cpt& p = model.cpt(edge.cpt);
    for (int k = 0; k < m; ++k) column[k] = p(k, parent_state);
    a.states[i] = sample_index(column, rng);
  }
  return a;
}

// log P(Z, X); -inf when any factor vanishes.
inline double log_joint(const DynamicTreeModel& model, const Assignment& a) {
  double total = 0.0;
  for (int i = 0; i < model.num_nodes(); ++i) {
    const Edge& edge = model.menu(i)[a.tree[i]];
    const int parent_state = edge.parent == kVirtualRoot ? 0 : a.states[edge.parent];
    total += std::log(edge.rho) + std::log(model.cpt(edge.cpt)(a.states[i], parent_state));
  }
  return total;
}

}  // namespace dyntree
