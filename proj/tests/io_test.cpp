#include <gtest/gtest.h>

#include <string>

#include "support.hpp"

using namespace dyntree;
using namespace dyntree::testing;

namespace {

std::string error_of(const std::string& text) {
  try {
    load_model(text);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ModelJson, RoundTripIsBitExact) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = random_model(rng);
    const std::string text = save_model(model);
    const auto back = load_model(text);
    EXPECT_EQ(save_model(back), text);
    for (const auto& [name, cpt] : model.spec().cpts) EXPECT_EQ(back.spec().cpts.at(name), cpt);
    EXPECT_EQ(back.spec().root_priors, model.spec().root_priors);
    for (int i = 0; i < model.num_nodes(); ++i)
      for (std::size_t e = 0; e < model.menu(i).size(); ++e) EXPECT_EQ(back.menu(i)[e].rho, model.menu(i)[e].rho);
  }
}

TEST(ModelJson, GeneratedModelsRoundTrip) {
  const auto model = build_layered_model({1, 2, 4, 8}, 2, ParentPriorSpec::gaussian(), CptSpec::diag(0.9),
                                         RootPriorSpec{});
  EXPECT_EQ(save_model(load_model(save_model(model))), save_model(model));
}

TEST(ModelJson, TiesAndRhoGroupsSurvive) {
  ModelSpec spec = build_layered_model({2, 2}, 2, ParentPriorSpec::nearest(), CptSpec::diag(0.8), RootPriorSpec{})
                       .spec();
  for (Menu& m : spec.menus) m.rho_group = "g";
  const DynamicTreeModel model(spec);
  const auto back = load_model(save_model(model));
  EXPECT_EQ(back.num_rho_groups(), 1);
  EXPECT_EQ(back.spec().menus[1].rho_group, "g");
}

TEST(ModelJson, MinimalDocumentUsesDefaults) {
  const std::string text = R"({
    "num_states": 2,
    "layers": [1, 2],
    "root_priors": [[0.5, 0.5]],
    "menus": [
      {"child": [1, 0], "parents": [[0, 0]], "rhos": [1.0]},
      {"child": [1, 1], "parents": [[0, 0]], "rhos": [1.0]}
    ],
    "cpts": {"layer1": [[0.9, 0.1], [0.1, 0.9]]}
  })";
  const auto model = load_model(text);
  EXPECT_EQ(model.num_nodes(), 3);
  EXPECT_EQ(model.tie_name(model.menu(2)[0].cpt), "layer1");
}

TEST(ModelJson, ErrorsNameTheField) {
  EXPECT_NE(error_of("{").find("malformed"), std::string::npos);
  EXPECT_NE(error_of(R"({"layers": [1]})").find("num_states"), std::string::npos);
  EXPECT_NE(error_of(R"({"num_states": 2, "layers": [1], "root_priors": [[0.5, 0.5]], "cpts": {}})").find("menus"),
            std::string::npos);
  const std::string bad_rho = R"({
    "num_states": 2, "layers": [1, 1], "root_priors": [[0.5, 0.5]],
    "menus": [{"child": [1, 0], "parents": [[0, 0]], "rhos": [0.9]}],
    "cpts": {"layer1": [[1, 0], [0, 1]]}})";
  EXPECT_NE(error_of(bad_rho).find("(1,0)"), std::string::npos);
  EXPECT_NE(error_of(R"({"format_version": 99, "num_states": 2})").find("format_version"), std::string::npos);
  const std::string bad_matrix = R"({
    "num_states": 2, "layers": [1, 1], "root_priors": [[0.5, 0.5]],
    "menus": [{"child": [1, 0], "parents": [[0, 0]], "rhos": [1.0]}],
    "cpts": {"layer1": [[1, 0, 0], [0, 1]]}})";
  EXPECT_NE(error_of(bad_matrix).find("layer1"), std::string::npos);
}

TEST(EvidenceJson, RoundTripAndValidation) {
  const auto model = build_layered_model({1, 3}, 3, ParentPriorSpec::nearest(), CptSpec::diag(0.8), RootPriorSpec{});
  const Evidence ev{{2, 0, 1}};
  const std::string text = save_evidence(ev);
  EXPECT_EQ(load_evidence(text, &model), ev);
  EXPECT_THROW(load_evidence(R"({"leaves": [{"index": 0, "state": 1}]})", &model), IoError);
  EXPECT_THROW(load_evidence(R"({"leaves": [{"index": 0, "state": 1}, {"index": 0, "state": 1}]})", &model), IoError);
  EXPECT_THROW(load_evidence(
                   R"({"leaves": [{"index": 0, "state": 1}, {"index": 1, "state": 1}, {"index": 2, "state": 3}]})",
                   &model),
               IoError);
  EXPECT_THROW(load_evidence(R"({"leaves": [{"index": 5, "state": 1}]})", &model), IoError);
}

TEST(DatasetJson, RoundTrip) {
  const auto model = build_layered_model({1, 2}, 2, ParentPriorSpec::nearest(), CptSpec::diag(0.8), RootPriorSpec{});
  const std::vector<Evidence> cases{{{0, 1}}, {{1, 1}}};
  const auto back = dataset_from_json(parse_json(dump_json(dataset_to_json(cases)), "dataset"), &model);
  EXPECT_EQ(back, cases);
}

TEST(StateDumps, CarryTheTraceAndTables) {
  const auto model = build_layered_model({2, 2}, 2, ParentPriorSpec::above_and_right(), CptSpec::diag(0.8),
                                         RootPriorSpec{});
  const auto s = svi_fit(model, Evidence{{0, 1}});
  const Json j = svi_state_to_json(model, s);
  EXPECT_EQ(j["free_energy_trace"].size(), s.free_energy_trace.size());
  std::size_t edges = 0;
  for (int i = 0; i < model.num_nodes(); ++i) edges += model.menu(i).size();
  EXPECT_EQ(j["q_tables"].size(), edges);
  EXPECT_EQ(j["mu"].size(), 2u);
  const auto post = exact_posterior(model, Evidence{{0, 1}});
  const Json e = exact_posterior_to_json(model, post, 2);
  EXPECT_EQ(e["top_trees"].size(), 2u);
  EXPECT_EQ(e["num_trees"].get<std::uint64_t>(), tree_count(model));
}
