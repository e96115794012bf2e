#pragma once

// Seeded comparison experiments: marginal accuracy against the exact oracle
// (structured variational vs loopy propagation) and free energies on
// one-dimensional Markov data (structured variational vs mean field).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dyntree/io.hpp"
#include "dyntree/loopy.hpp"
#include "dyntree/mean_field.hpp"
#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/svi.hpp"

namespace dyntree {

using Marginals = std::vector<std::vector<double>>;

// sum over nodes of KL(truth || approx), natural log.
inline double marginal_kl_sum(const Marginals& truth, const Marginals& approx) {
  if (truth.size() != approx.size()) throw std::invalid_argument("marginal_kl_sum: node counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != approx[i].size()) throw std::invalid_argument("marginal_kl_sum: state counts differ");
    for (std::size_t k = 0; k < truth[i].size(); ++k) total += x_log_x_over_y(truth[i][k], approx[i][k]);
  }
  return total;
}

// Binary Markov chains (uniform start, P(stay) = stay_prob) with each bit then
// flipped independently with probability flip_noise.
inline std::vector<Evidence> gen_markov_cases(int num_cases, int chain_length, double stay_prob, double flip_noise,
                                              Rng& rng) {
  if (!(stay_prob >= 0.0 && stay_prob <= 1.0) || !(flip_noise >= 0.0 && flip_noise <= 1.0)) {
    throw std::invalid_argument("gen_markov_cases: probabilities must lie in [0, 1]");
  }
  std::vector<Evidence> cases(num_cases);
  for (auto& c : cases) {
    c.states.resize(chain_length);
    int state = uniform01(rng) < 0.5 ? 0 : 1;
    for (int t = 0; t < chain_length; ++t) {
      if (t > 0 && uniform01(rng) >= stay_prob) state = 1 - state;
      c.states[t] = uniform01(rng) < flip_noise ? 1 - state : state;
    }
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Reports.

struct MethodResult {
  std::string method;
  double value = 0.0;  // summed marginal KL or free energy
  double seconds = 0.0;
};

struct RunRecord {
  int index = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::vector<MethodResult> methods;
  // Free-energy runs: mu-weighted mean diagonal / off-diagonal mass of the
  // fitted hidden-edge tables.
  double q_diagonal = 0.0;
  double q_off_diagonal = 0.0;
};

struct MethodSummary {
  std::string method;
  int count = 0;
  double mean = 0.0;
  double std_error = 0.0;
  double mean_seconds = 0.0;
};

struct ReportSummary {
  int runs = 0;
  int failed = 0;
  std::vector<MethodSummary> methods;
  // Fraction of successful runs where the first method's value is <= the second's.
  double first_wins = 0.0;
  double mean_gap = 0.0;  // mean(second - first)
  double q_diagonal = 0.0;
  double q_off_diagonal = 0.0;
};

struct ComparisonReport {
  std::string experiment;
  Json config;
  std::vector<std::string> method_order;
  std::vector<RunRecord> records;
  ReportSummary summary;
};

inline ReportSummary summarize(const std::vector<std::string>& method_order, const std::vector<RunRecord>& records) {
  ReportSummary s;
  s.runs = static_cast<int>(records.size());
  for (const auto& name : method_order) {
    MethodSummary m;
    m.method = name;
    double sum = 0.0;
    double sum_sq = 0.0;
    double secs = 0.0;
    for (const auto& r : records) {
      if (!r.ok) continue;
      for (const auto& mr : r.methods) {
        if (mr.method != name) continue;
        ++m.count;
        sum += mr.value;
        sum_sq += mr.value * mr.value;
        secs += mr.seconds;
      }
    }
    if (m.count > 0) {
      m.mean = sum / m.count;
      m.mean_seconds = secs / m.count;
      if (m.count > 1) {
        const double var = std::max(0.0, (sum_sq - m.count * m.mean * m.mean) / (m.count - 1));
        m.std_error = std::sqrt(var / m.count);
      }
    }
    s.methods.push_back(m);
  }
  int ok = 0;
  int wins = 0;
  double gap = 0.0;
  for (const auto& r : records) {
    if (!r.ok) {
      ++s.failed;
      continue;
    }
    ++ok;
    s.q_diagonal += r.q_diagonal;
    s.q_off_diagonal += r.q_off_diagonal;
    if (r.methods.size() >= 2) {
      if (r.methods[0].value <= r.methods[1].value) ++wins;
      gap += r.methods[1].value - r.methods[0].value;
    }
  }
  if (ok > 0) {
    s.first_wins = static_cast<double>(wins) / ok;
    s.mean_gap = gap / ok;
    s.q_diagonal /= ok;
    s.q_off_diagonal /= ok;
  }
  return s;
}

namespace detail {

inline std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Fn>
double timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// One row per record and method; timings are left out so the file depends
// only on the configuration.
inline std::string report_csv(const ComparisonReport& report) {
  std::string out = "experiment,index,seed,method,value,status\n";
  for (const auto& r : report.records) {
    for (const auto& name : report.method_order) {
      std::string value = "nan";
      for (const auto& mr : r.methods)
        if (mr.method == name) value = detail::csv_double(mr.value);
      out += report.experiment + "," + std::to_string(r.index) + "," + std::to_string(r.seed) + "," + name + "," +
             value + "," + (r.ok ? "ok" : "error") + "\n";
    }
  }
  return out;
}

// Machine-readable report without timings (deterministic).
inline Json report_to_json(const ComparisonReport& report) {
  Json j;
  j["format_version"] = kFormatVersion;
  j["experiment"] = report.experiment;
  j["config"] = report.config;
  Json methods = Json::array();
  for (const auto& m : report.summary.methods) {
    methods.push_back(Json{{"method", m.method}, {"count", m.count}, {"mean", m.mean}, {"std_error", m.std_error}});
  }
  Json summary;
  summary["runs"] = report.summary.runs;
  summary["failed"] = report.summary.failed;
  summary["methods"] = methods;
  if (report.method_order.size() >= 2) {
    summary["fraction_" + report.method_order[0] + "_not_worse"] = report.summary.first_wins;
    summary["mean_gap_" + report.method_order[1] + "_minus_" + report.method_order[0]] = report.summary.mean_gap;
  }
  if (report.experiment == "free_energy_comparison") {
    summary["q_diagonal_mass"] = report.summary.q_diagonal;
    summary["q_off_diagonal_mass"] = report.summary.q_off_diagonal;
  }
  j["summary"] = summary;
  Json records = Json::array();
  for (const auto& r : report.records) {
    Json rec;
    rec["index"] = r.index;
    rec["seed"] = r.seed;
    rec["status"] = r.ok ? "ok" : "error";
    if (!r.ok) rec["error"] = r.error;
    for (const auto& mr : r.methods) rec[mr.method] = mr.value;
    if (report.experiment == "free_energy_comparison" && r.ok) {
      rec["q_diagonal_mass"] = r.q_diagonal;
      rec["q_off_diagonal_mass"] = r.q_off_diagonal;
    }
    records.push_back(rec);
  }
  j["records"] = records;
  return j;
}

inline Json report_timing_json(const ComparisonReport& report) {
  Json j;
  j["experiment"] = report.experiment;
  Json mean = Json::object();
  for (const auto& m : report.summary.methods) mean[m.method] = m.mean_seconds;
  j["mean_seconds"] = mean;
  Json runs = Json::array();
  for (const auto& r : report.records) {
    Json rec{{"index", r.index}};
    for (const auto& mr : r.methods) rec[mr.method] = mr.seconds;
    runs.push_back(rec);
  }
  j["runs"] = runs;
  return j;
}

// ---------------------------------------------------------------------------
// Configurations.

inline Json fit_options_to_json(const FitOptions& o) {
  return Json{{"max_passes", o.max_passes}, {"kl_tolerance", o.kl_tolerance}, {"mu_damping", o.mu_damping}};
}
inline FitOptions fit_options_from_json(const Json& j, FitOptions o) {
  o.max_passes = j.value("max_passes", o.max_passes);
  o.kl_tolerance = j.value("kl_tolerance", o.kl_tolerance);
  o.mu_damping = j.value("mu_damping", o.mu_damping);
  return o;
}
inline Json loopy_options_to_json(const LoopyOptions& o) {
  return Json{{"max_iterations", o.max_iterations}, {"message_tolerance", o.message_tolerance}, {"damping", o.damping}};
}
inline LoopyOptions loopy_options_from_json(const Json& j, LoopyOptions o) {
  o.max_iterations = j.value("max_iterations", o.max_iterations);
  o.message_tolerance = j.value("message_tolerance", o.message_tolerance);
  o.damping = j.value("damping", o.damping);
  return o;
}
inline Json mf_options_to_json(const MeanFieldOptions& o) {
  return Json{{"inner_iterations", o.inner_iterations}, {"max_outer", o.max_outer}, {"tolerance", o.tolerance},
              {"perturbation", o.perturbation}};
}
inline MeanFieldOptions mf_options_from_json(const Json& j, MeanFieldOptions o) {
  o.inner_iterations = j.value("inner_iterations", o.inner_iterations);
  o.max_outer = j.value("max_outer", o.max_outer);
  o.tolerance = j.value("tolerance", o.tolerance);
  o.perturbation = j.value("perturbation", o.perturbation);
  return o;
}

// Toy grid: square layers, two-entry menus, random strong-diagonal tables.
struct MarginalComparisonConfig {
  int num_runs = 50;
  int num_layers = 4;
  int layer_width = 4;
  int num_states = 3;
  double above_weight = 0.6;
  double diagonal_weight = 3.0;
  bool uniform_cpts = false;
  std::uint64_t tree_limit = 1'000'000;
  std::uint64_t seed = 0;
  int threads = 1;
  FitOptions svi{1000, 1e-6, 0.0};
  LoopyOptions loopy{};
};

// One-dimensional dyadic hierarchy with Gaussian parent priors.
struct FreeEnergyComparisonConfig {
  int num_cases = 150;
  std::vector<int> layer_sizes{1, 2, 4, 8, 16, 32};
  int num_states = 2;
  double sigma_factor = 3.0;
  double diagonal = 0.9;
  bool uniform_cpts = false;
  double stay_prob = 0.9;
  double flip_noise = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
  FitOptions svi{5, 0.01, 0.0};
  MeanFieldOptions mean_field{20, 100, 0.01, 0, 1e-3};
};

inline Json config_to_json(const MarginalComparisonConfig& c) {
  Json j;
  j["experiment"] = "marginal_comparison";
  j["seed"] = c.seed;
  j["num_runs"] = c.num_runs;
  j["num_layers"] = c.num_layers;
  j["layer_width"] = c.layer_width;
  j["num_states"] = c.num_states;
  j["above_weight"] = c.above_weight;
  j["diagonal_weight"] = c.diagonal_weight;
  j["uniform_cpts"] = c.uniform_cpts;
  j["tree_limit"] = c.tree_limit;
  j["threads"] = c.threads;
  j["svi"] = fit_options_to_json(c.svi);
  j["loopy"] = loopy_options_to_json(c.loopy);
  return j;
}

inline Json config_to_json(const FreeEnergyComparisonConfig& c) {
  Json j;
  j["experiment"] = "free_energy_comparison";
  j["seed"] = c.seed;
  j["num_cases"] = c.num_cases;
  j["layer_sizes"] = c.layer_sizes;
  j["num_states"] = c.num_states;
  j["sigma_factor"] = c.sigma_factor;
  j["diagonal"] = c.diagonal;
  j["uniform_cpts"] = c.uniform_cpts;
  j["stay_prob"] = c.stay_prob;
  j["flip_noise"] = c.flip_noise;
  j["threads"] = c.threads;
  j["svi"] = fit_options_to_json(c.svi);
  j["mean_field"] = mf_options_to_json(c.mean_field);
  return j;
}

inline MarginalComparisonConfig marginal_config_from_json(const Json& j) {
  MarginalComparisonConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.num_runs = j.value("num_runs", c.num_runs);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.layer_width = j.value("layer_width", c.layer_width);
    c.num_states = j.value("num_states", c.num_states);
    c.above_weight = j.value("above_weight", c.above_weight);
    c.diagonal_weight = j.value("diagonal_weight", c.diagonal_weight);
    c.uniform_cpts = j.value("uniform_cpts", c.uniform_cpts);
    c.tree_limit = j.value("tree_limit", c.tree_limit);
    c.threads = j.value("threads", c.threads);
    if (j.contains("svi")) c.svi = fit_options_from_json(j.at("svi"), c.svi);
    if (j.contains("loopy")) c.loopy = loopy_options_from_json(j.at("loopy"), c.loopy);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  if (c.num_runs < 1 || c.num_layers < 1 || c.layer_width < 1 || c.num_states < 2) {
    throw IoError("config: num_runs, num_layers, layer_width must be positive and num_states >= 2");
  }
  if (!(c.above_weight > 0.0 && c.above_weight <= 1.0)) throw IoError("config: above_weight must lie in (0, 1]");
  return c;
}

inline FreeEnergyComparisonConfig free_energy_config_from_json(const Json& j) {
  FreeEnergyComparisonConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.num_cases = j.value("num_cases", c.num_cases);
    c.layer_sizes = j.value("layer_sizes", c.layer_sizes);
    c.num_states = j.value("num_states", c.num_states);
    c.sigma_factor = j.value("sigma_factor", c.sigma_factor);
    c.diagonal = j.value("diagonal", c.diagonal);
    c.uniform_cpts = j.value("uniform_cpts", c.uniform_cpts);
    c.stay_prob = j.value("stay_prob", c.stay_prob);
    c.flip_noise = j.value("flip_noise", c.flip_noise);
    c.threads = j.value("threads", c.threads);
    if (j.contains("svi")) c.svi = fit_options_from_json(j.at("svi"), c.svi);
    if (j.contains("mean_field")) c.mean_field = mf_options_from_json(j.at("mean_field"), c.mean_field);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  if (c.num_cases < 1 || c.layer_sizes.empty()) throw IoError("config: num_cases and layer_sizes must be nonempty");
  if (c.num_states != 2) throw IoError("config: the Markov data generator produces binary leaves; num_states must be 2");
  for (int size : c.layer_sizes) {
    if (size < 1) throw IoError("config: layer sizes must be positive");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Experiments.

inline DynamicTreeModel marginal_comparison_model(const MarginalComparisonConfig& c, Rng& rng) {
  const std::vector<int> sizes(c.num_layers, c.layer_width);
  const CptSpec cpts = c.uniform_cpts ? CptSpec::uniform() : CptSpec::random_strong_diagonal(c.diagonal_weight);
  return build_layered_model(sizes, c.num_states, ParentPriorSpec::above_and_right(c.above_weight), cpts,
                             RootPriorSpec::uniform(), &rng);
}

inline RunRecord marginal_comparison_run(const MarginalComparisonConfig& c, int index) {
  RunRecord rec;
  rec.index = index;
  rec.seed = derive_seed(c.seed, static_cast<std::uint64_t>(index));
  try {
    Rng rng(rec.seed);
    const DynamicTreeModel model = marginal_comparison_model(c, rng);
    const Evidence evidence = leaf_evidence(model, sample_prior(model, rng));
    const ExactPosterior truth = exact_posterior(model, evidence, OracleOptions{c.tree_limit});

    StructuredPosterior svi;
    const double svi_secs = detail::timed([&]() { svi = svi_fit(model, evidence, c.svi); });
    LoopyResult loopy;
    const double loopy_secs = detail::timed([&]() { loopy = loopy_fit(model, evidence, c.loopy); });
    rec.methods.push_back({"svi", marginal_kl_sum(truth.node_marginals, svi.means), svi_secs});
    rec.methods.push_back({"loopy", marginal_kl_sum(truth.node_marginals, loopy.marginals), loopy_secs});
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.methods.clear();
  }
  return rec;
}

inline ComparisonReport run_marginal_comparison(const MarginalComparisonConfig& c) {
  ComparisonReport report;
  report.experiment = "marginal_comparison";
  report.config = config_to_json(c);
  report.method_order = {"svi", "loopy"};
  report.records.resize(c.num_runs);
  detail::for_each_case(static_cast<std::size_t>(c.num_runs), c.threads, [&](std::size_t r) {
    report.records[r] = marginal_comparison_run(c, static_cast<int>(r));
  });
  report.summary = summarize(report.method_order, report.records);
  return report;
}

inline DynamicTreeModel free_energy_comparison_model(const FreeEnergyComparisonConfig& c) {
  const CptSpec cpts = c.uniform_cpts ? CptSpec::uniform() : CptSpec::diag(c.diagonal);
  return build_layered_model(c.layer_sizes, c.num_states, ParentPriorSpec::gaussian(c.sigma_factor), cpts,
                             RootPriorSpec::uniform());
}

// mu-weighted mean of diagonal and off-diagonal table entries over hidden,
// non-top edges.
inline std::pair<double, double> table_diagonal_mass(const StructuredPosterior& s, const DynamicTreeModel& model) {
  const int m = model.num_states();
  double diag = 0.0;
  double off = 0.0;
  double weight = 0.0;
  for (int i = model.layer_size(0); i < model.num_nodes(); ++i) {
    if (s.observed[i] != kUnobserved) continue;
    for (std::size_t e = 0; e < model.menu(i).size(); ++e) {
      const double w = s.mu[i][e];
      const StateMatrix& q = s.q_tables[i][e];
      for (int l = 0; l < m; ++l) {
        diag += w * q(l, l);
        off += w * (1.0 - q(l, l)) / (m - 1);
        weight += w;
      }
    }
  }
  if (weight <= 0.0) return {0.0, 0.0};
  return {diag / weight, off / weight};
}

inline RunRecord free_energy_comparison_case(const FreeEnergyComparisonConfig& c, const DynamicTreeModel& model,
                                             int index) {
  RunRecord rec;
  rec.index = index;
  rec.seed = derive_seed(c.seed, static_cast<std::uint64_t>(index));
  try {
    Rng rng(rec.seed);
    const int leaves = model.layer_size(model.num_layers() - 1);
    const Evidence evidence = gen_markov_cases(1, leaves, c.stay_prob, c.flip_noise, rng).front();
    MeanFieldOptions mf_options = c.mean_field;
    mf_options.seed = splitmix64(rec.seed);

    StructuredPosterior svi;
    const double svi_secs = detail::timed([&]() { svi = svi_fit(model, evidence, c.svi); });
    MeanFieldPosterior mf;
    const double mf_secs = detail::timed([&]() { mf = mf_fit(model, evidence, mf_options); });
    rec.methods.push_back({"svi", svi.free_energy_trace.back(), svi_secs});
    rec.methods.push_back({"mf", mf.free_energy_trace.back(), mf_secs});
    std::tie(rec.q_diagonal, rec.q_off_diagonal) = table_diagonal_mass(svi, model);
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.methods.clear();
  }
  return rec;
}

inline ComparisonReport run_free_energy_comparison(const FreeEnergyComparisonConfig& c) {
  ComparisonReport report;
  report.experiment = "free_energy_comparison";
  report.config = config_to_json(c);
  report.method_order = {"svi", "mf"};
  const DynamicTreeModel model = free_energy_comparison_model(c);
  report.records.resize(c.num_cases);
  detail::for_each_case(static_cast<std::size_t>(c.num_cases), c.threads, [&](std::size_t r) {
    report.records[r] = free_energy_comparison_case(c, model, static_cast<int>(r));
  });
  report.summary = summarize(report.method_order, report.records);
  return report;
}

}  // namespace dyntree
