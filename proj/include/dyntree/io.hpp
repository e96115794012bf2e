#pragma once

// JSON documents: model, evidence, datasets, and the result dumps written by
// the command-line tool. Doubles are written in shortest round-trip form, so
// load(save(x)) reproduces x bit for bit.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dyntree/mean_field.hpp"
#include "dyntree/model.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/svi.hpp"
#include "dyntree/tree_bp.hpp"

namespace dyntree {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// File access or document-shape problems; the message names the field.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed JSON: " + e.what());
  }
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

namespace detail {

template <typename T>
T field(const Json& j, const std::string& name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw IoError(where + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw IoError(where + ": field '" + name + "' has the wrong type");
  }
}

inline NodeRef node_ref(const Json& j, const std::string& where) {
  try {
    const auto v = j.get<std::vector<int>>();
    if (v.size() == 2) return {v[0], v[1]};
  } catch (const nlohmann::json::exception&) {
  }
  throw IoError(where + ": node must be [layer, index]");
}

inline Json ref_json(NodeRef r) { return Json::array({r.layer, r.index}); }

inline Json matrix_json(const StateMatrix& m) {
  Json rows = Json::array();
  for (const auto& row : m.rows()) rows.push_back(row);
  return rows;
}

inline StateMatrix matrix_from(const Json& j, const std::string& where) {
  try {
    return StateMatrix::from_rows(j.get<std::vector<std::vector<double>>>());
  } catch (const std::exception&) {
    throw IoError(where + ": expected a square matrix of numbers");
  }
}

inline void check_version(const Json& j, const std::string& where) {
  if (j.contains("format_version") && j.at("format_version") != kFormatVersion) {
    throw IoError(where + ": unsupported format_version");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model documents.

inline Json model_to_json(const DynamicTreeModel& model) {
  const ModelSpec& spec = model.spec();
  Json j;
  j["format_version"] = kFormatVersion;
  j["num_states"] = spec.num_states;
  Json layers = Json::array();
  for (std::size_t d = 0; d < spec.layer_sizes.size(); ++d) {
    Json positions = Json::array();
    for (const Position& p : spec.positions[d]) positions.push_back(Json::array({p.x, p.y}));
    layers.push_back(Json{{"size", spec.layer_sizes[d]}, {"positions", positions}});
  }
  j["layers"] = layers;
  j["root_priors"] = spec.root_priors;
  Json menus = Json::array();
  Json edge_ties = Json::array();
  Json rho_groups = Json::array();
  for (const Menu& menu : spec.menus) {
    Json parents = Json::array();
    std::vector<double> rhos;
    std::vector<std::string> ties;
    for (const MenuEntry& e : menu.entries) {
      parents.push_back(detail::ref_json(e.parent));
      rhos.push_back(e.rho);
      ties.push_back(e.tie);
    }
    menus.push_back(Json{{"child", detail::ref_json(menu.child)}, {"parents", parents}, {"rhos", rhos}});
    edge_ties.push_back(ties);
    rho_groups.push_back(menu.rho_group);
  }
  j["menus"] = menus;
  Json cpts = Json::object();
  for (const auto& [name, cpt] : spec.cpts) cpts[name] = detail::matrix_json(cpt);
  j["cpts"] = cpts;
  j["ties"] = Json{{"edges", edge_ties}, {"rho_groups", rho_groups}};
  return j;
}

// Throws IoError for shape problems and ModelError for invariant violations.
inline DynamicTreeModel model_from_json(const Json& j) {
  const std::string where = "model";
  detail::check_version(j, where);
  ModelSpec spec;
  spec.num_states = detail::field<int>(j, "num_states", where);
  const Json layers = detail::field<Json>(j, "layers", where);
  if (!layers.is_array()) throw IoError("model: field 'layers' must be an array");
  for (std::size_t d = 0; d < layers.size(); ++d) {
    const std::string lw = "model.layers[" + std::to_string(d) + "]";
    const Json& layer = layers[d];
    const int size = layer.is_number_integer() ? layer.get<int>() : detail::field<int>(layer, "size", lw);
    spec.layer_sizes.push_back(size);
    std::vector<Position> positions;
    if (layer.is_object() && layer.contains("positions")) {
      for (const auto& p : layer.at("positions")) {
        const auto xy = p.get<std::vector<double>>();
        if (xy.empty() || xy.size() > 2) throw IoError(lw + ".positions: expected [x] or [x, y]");
        positions.push_back({xy[0], xy.size() > 1 ? xy[1] : 0.0});
      }
    } else if (size > 0) {
      positions = uniform_layer_positions(size);
    }
    spec.positions.push_back(std::move(positions));
  }
  spec.root_priors = detail::field<std::vector<std::vector<double>>>(j, "root_priors", where);

  const Json cpts = detail::field<Json>(j, "cpts", where);
  if (!cpts.is_object()) throw IoError("model: field 'cpts' must be an object keyed by tie class");
  for (const auto& [name, rows] : cpts.items()) spec.cpts[name] = detail::matrix_from(rows, "model.cpts['" + name + "']");

  const Json menus = detail::field<Json>(j, "menus", where);
  const Json ties = j.contains("ties") ? j.at("ties") : Json::object();
  const Json edge_ties = ties.contains("edges") ? ties.at("edges") : Json::array();
  const Json rho_groups = ties.contains("rho_groups") ? ties.at("rho_groups") : Json::array();
  for (std::size_t mi = 0; mi < menus.size(); ++mi) {
    const std::string mw = "model.menus[" + std::to_string(mi) + "]";
    Menu menu;
    menu.child = detail::node_ref(detail::field<Json>(menus[mi], "child", mw), mw + ".child");
    const Json parents = detail::field<Json>(menus[mi], "parents", mw);
    const auto rhos = detail::field<std::vector<double>>(menus[mi], "rhos", mw);
    if (parents.size() != rhos.size()) throw IoError(mw + ": 'parents' and 'rhos' differ in length");
    std::vector<std::string> names;
    if (mi < edge_ties.size()) {
      names = edge_ties[mi].get<std::vector<std::string>>();
    } else {
      names.assign(parents.size(), layer_tie_name(menu.child.layer));
    }
    if (names.size() != parents.size()) throw IoError("model.ties.edges[" + std::to_string(mi) + "]: wrong length");
    for (std::size_t e = 0; e < parents.size(); ++e) {
      menu.entries.push_back({detail::node_ref(parents[e], mw + ".parents"), rhos[e], names[e]});
    }
    if (mi < rho_groups.size()) menu.rho_group = rho_groups[mi].get<std::string>();
    spec.menus.push_back(std::move(menu));
  }
  return DynamicTreeModel(std::move(spec));
}

inline std::string save_model(const DynamicTreeModel& model) { return dump_json(model_to_json(model)); }
inline DynamicTreeModel load_model(const std::string& text) { return model_from_json(parse_json(text, "model")); }
inline DynamicTreeModel load_model_file(const std::string& path) { return load_model(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Evidence and datasets.

inline Json evidence_to_json(const Evidence& ev) {
  Json leaves = Json::array();
  for (std::size_t i = 0; i < ev.states.size(); ++i) {
    leaves.push_back(Json{{"index", static_cast<int>(i)}, {"state", ev.states[i]}});
  }
  return Json{{"format_version", kFormatVersion}, {"leaves", leaves}};
}

// Requires every leaf exactly once when `model` is given.
inline Evidence evidence_from_json(const Json& j, const DynamicTreeModel* model = nullptr,
                                   const std::string& where = "evidence") {
  detail::check_version(j, where);
  const Json leaves = detail::field<Json>(j, "leaves", where);
  if (!leaves.is_array()) throw IoError(where + ": field 'leaves' must be an array");
  int count = static_cast<int>(leaves.size());
  if (model != nullptr) count = model->layer_size(model->num_layers() - 1);
  Evidence ev{std::vector<int>(count, kUnobserved)};
  for (const auto& leaf : leaves) {
    const int index = detail::field<int>(leaf, "index", where + ".leaves");
    const int state = detail::field<int>(leaf, "state", where + ".leaves");
    if (index < 0 || index >= count) throw IoError(where + ": leaf index " + std::to_string(index) + " out of range");
    if (ev.states[index] != kUnobserved) throw IoError(where + ": leaf " + std::to_string(index) + " given twice");
    ev.states[index] = state;
  }
  if (model != nullptr) {
    for (int i = 0; i < count; ++i) {
      if (ev.states[i] == kUnobserved) throw IoError(where + ": leaf " + std::to_string(i) + " has no state");
    }
    if (auto errors = validate(*model, ev); !errors.empty()) throw IoError(where + ": " + errors.front());
  }
  return ev;
}

inline std::string save_evidence(const Evidence& ev) { return dump_json(evidence_to_json(ev)); }
inline Evidence load_evidence(const std::string& text, const DynamicTreeModel* model = nullptr) {
  return evidence_from_json(parse_json(text, "evidence"), model);
}

inline Json dataset_to_json(const std::vector<Evidence>& cases) {
  Json arr = Json::array();
  for (const auto& c : cases) arr.push_back(Json{{"leaves", evidence_to_json(c)["leaves"]}});
  return Json{{"format_version", kFormatVersion}, {"cases", arr}};
}

inline std::vector<Evidence> dataset_from_json(const Json& j, const DynamicTreeModel* model = nullptr) {
  detail::check_version(j, "dataset");
  const Json cases = detail::field<Json>(j, "cases", "dataset");
  std::vector<Evidence> out;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    out.push_back(evidence_from_json(cases[c], model, "dataset.cases[" + std::to_string(c) + "]"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Result dumps.

inline Json tree_to_json(const DynamicTreeModel& model, const TreeStructure& tree) {
  Json arr = Json::array();
  for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
    arr.push_back(Json{{"child", detail::ref_json(model.ref(i))},
                       {"parent", detail::ref_json(model.ref(tree_parent(model, tree, i)))}});
  }
  return arr;
}

inline Json marginals_to_json(const DynamicTreeModel& model, const std::vector<std::vector<double>>& marginals) {
  Json arr = Json::array();
  for (int i = 0; i < model.num_nodes(); ++i) {
    arr.push_back(Json{{"node", detail::ref_json(model.ref(i))}, {"p", marginals[i]}});
  }
  return arr;
}

namespace detail {

inline Json mu_json(const DynamicTreeModel& model, const std::vector<std::vector<double>>& mu) {
  Json arr = Json::array();
  for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
    Json parents = Json::array();
    for (const Edge& e : model.menu(i)) parents.push_back(ref_json(model.ref(e.parent)));
    arr.push_back(Json{{"node", ref_json(model.ref(i))}, {"parents", parents}, {"mu", mu[i]}});
  }
  return arr;
}

}  // namespace detail

inline Json svi_state_to_json(const DynamicTreeModel& model, const StructuredPosterior& s) {
  Json q = Json::array();
  for (int i = 0; i < model.num_nodes(); ++i) {
    const auto menu = model.menu(i);
    for (std::size_t e = 0; e < menu.size(); ++e) {
      Json parent = menu[e].parent == kVirtualRoot ? Json("root") : detail::ref_json(model.ref(menu[e].parent));
      q.push_back(Json{{"node", detail::ref_json(model.ref(i))}, {"parent", parent},
                       {"table", detail::matrix_json(s.q_tables[i][e])}});
    }
  }
  Json j;
  j["mu"] = detail::mu_json(model, s.mu);
  j["q_tables"] = q;
  j["means"] = marginals_to_json(model, s.means);
  j["free_energy_trace"] = s.free_energy_trace;
  j["converged"] = s.converged;
  j["monotone"] = s.monotone;
  j["diagnostics"] = s.diagnostics;
  return j;
}

inline Json mf_state_to_json(const DynamicTreeModel& model, const MeanFieldPosterior& s) {
  Json j;
  j["mu"] = detail::mu_json(model, s.mu);
  j["means"] = marginals_to_json(model, s.means);
  j["free_energy_trace"] = s.free_energy_trace;
  j["converged"] = s.converged;
  j["monotone"] = s.monotone;
  j["diagnostics"] = s.diagnostics;
  return j;
}

inline Json exact_posterior_to_json(const DynamicTreeModel& model, const ExactPosterior& post, std::size_t top_k) {
  Json j;
  j["log_evidence"] = post.log_evidence;
  j["num_trees"] = post.num_trees;
  j["marginals"] = marginals_to_json(model, post.node_marginals);
  j["edge_posterior"] = detail::mu_json(model, post.edge_posterior);
  Json top = Json::array();
  for (std::uint64_t t : top_trees(post, top_k)) {
    top.push_back(Json{{"index", t}, {"posterior", post.tree_posterior[t]},
                       {"tree", tree_to_json(model, tree_from_index(model, t))}});
  }
  j["top_trees"] = top;
  return j;
}

}  // namespace dyntree
