#pragma once

// Command-line front end. run_cli() is the whole program; tools/dyntree.cpp
// only forwards argv, which keeps every command reachable from tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dyntree/harness.hpp"
#include "dyntree/io.hpp"
#include "dyntree/loopy.hpp"
#include "dyntree/mean_field.hpp"
#include "dyntree/model.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/svi.hpp"
#include "dyntree/tree_bp.hpp"

namespace dyntree {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitCompute = 3;

struct CliArgs {
  std::string model_path;
  std::string evidence_path;
  std::string dataset_path;
  std::string config_path;
  std::string out;
  std::string method = "svi";
  std::string kind = "marginal_comparison";
  std::string format = "json";
  std::string evidence_out;
  std::string dataset_out;
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<int> max_passes;
  std::optional<double> tolerance;
  std::uint64_t tree_limit = 1'000'000;
  int top_k = 10;
  int iterations = 5;
  int cases = 20;
};

namespace cli_detail {

// Sends a document to --out, or to stdout when no path was given.
inline void emit(const std::string& text, const std::string& out, std::ostream& os) {
  if (out.empty()) {
    os << text;
  } else {
    write_text_file(out, text);
  }
}

inline Json base_config(const std::string& command, const CliArgs& a) {
  Json c;
  c["command"] = command;
  c["seed"] = a.seed;
  if (!a.model_path.empty()) c["model"] = a.model_path;
  if (!a.evidence_path.empty()) c["evidence"] = a.evidence_path;
  return c;
}

inline FitOptions svi_options(const CliArgs& a) {
  FitOptions o;
  if (a.max_passes) o.max_passes = *a.max_passes;
  if (a.tolerance) o.kl_tolerance = *a.tolerance;
  if (o.max_passes < 1) throw IoError("--max-passes must be at least 1");
  if (!(o.kl_tolerance > 0.0)) throw IoError("--tolerance must be positive");
  return o;
}

inline MeanFieldOptions mf_options(const CliArgs& a) {
  MeanFieldOptions o;
  o.seed = a.seed;
  if (a.max_passes) o.max_outer = *a.max_passes;
  if (a.tolerance) o.tolerance = *a.tolerance;
  if (o.max_outer < 1) throw IoError("--max-passes must be at least 1");
  if (!(o.tolerance > 0.0)) throw IoError("--tolerance must be positive");
  return o;
}

inline LoopyOptions loopy_options(const CliArgs& a) {
  LoopyOptions o;
  if (a.max_passes) o.max_iterations = *a.max_passes;
  if (a.tolerance) o.message_tolerance = *a.tolerance;
  if (o.max_iterations < 1) throw IoError("--max-passes must be at least 1");
  if (!(o.message_tolerance > 0.0)) throw IoError("--tolerance must be positive");
  return o;
}

inline OracleOptions oracle_options(const CliArgs& a) {
  OracleOptions o;
  o.limit = a.tree_limit;
  o.threads = a.threads;
  return o;
}

inline Json load_config_json(const std::string& path) {
  if (path.empty()) return Json::object();
  Json j = parse_json(read_text_file(path), "config");
  if (!j.is_object()) throw IoError("config: expected an object");
  return j;
}

// --seed and --threads given on the command line override the config file.
inline Json with_overrides(Json j, const CliArgs& a, bool seed_given, bool threads_given) {
  if (seed_given || !j.contains("seed")) j["seed"] = a.seed;
  if (threads_given) j["threads"] = a.threads;
  return j;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Commands. Each returns an exit status; exceptions are mapped in run_cli.

inline int cmd_generate(const CliArgs& a, bool seed_given, bool threads_given, std::ostream& os) {
  Json cfg = cli_detail::with_overrides(cli_detail::load_config_json(a.config_path), a, seed_given, threads_given);
  Rng rng(derive_seed(cfg.value("seed", a.seed), 0));
  std::optional<DynamicTreeModel> model;
  Json resolved;
  if (a.kind == "marginal_comparison") {
    const auto c = marginal_config_from_json(cfg);
    resolved = config_to_json(c);
    model.emplace(marginal_comparison_model(c, rng));
  } else if (a.kind == "free_energy_comparison") {
    const auto c = free_energy_config_from_json(cfg);
    resolved = config_to_json(c);
    model.emplace(free_energy_comparison_model(c));
  } else {
    throw IoError("--kind must be marginal_comparison or free_energy_comparison");
  }
  Json doc = model_to_json(*model);
  doc["generator"] = resolved;
  cli_detail::emit(dump_json(doc), a.out, os);

  if (!a.evidence_out.empty()) {
    write_text_file(a.evidence_out, save_evidence(leaf_evidence(*model, sample_prior(*model, rng))));
  }
  if (!a.dataset_out.empty()) {
    if (a.cases < 1) throw IoError("--cases must be at least 1");
    std::vector<Evidence> cases;
    for (int c = 0; c < a.cases; ++c) cases.push_back(leaf_evidence(*model, sample_prior(*model, rng)));
    write_text_file(a.dataset_out, dump_json(dataset_to_json(cases)));
  }
  return kExitOk;
}

inline int cmd_infer(const CliArgs& a, std::ostream& os) {
  const DynamicTreeModel model = load_model_file(a.model_path);
  const Evidence ev = load_evidence(read_text_file(a.evidence_path), &model);
  Json out;
  out["format_version"] = kFormatVersion;
  Json cfg = cli_detail::base_config("infer", a);
  cfg["method"] = a.method;

  if (a.method == "svi") {
    const FitOptions o = cli_detail::svi_options(a);
    cfg["options"] = fit_options_to_json(o);
    const StructuredPosterior s = svi_fit(model, ev, o);
    out["config"] = cfg;
    out["marginals"] = marginals_to_json(model, s.means);
    out["free_energy"] = s.free_energy_trace.back();
    out["state"] = svi_state_to_json(model, s);
    out["map_tree"] = tree_to_json(model, svi_map_tree(s));
  } else if (a.method == "mf") {
    const MeanFieldOptions o = cli_detail::mf_options(a);
    cfg["options"] = mf_options_to_json(o);
    cfg["options"]["seed"] = o.seed;
    const MeanFieldPosterior s = mf_fit(model, ev, o);
    out["config"] = cfg;
    out["marginals"] = marginals_to_json(model, s.means);
    out["free_energy"] = s.free_energy_trace.back();
    out["state"] = mf_state_to_json(model, s);
  } else if (a.method == "loopy") {
    const LoopyOptions o = cli_detail::loopy_options(a);
    cfg["options"] = loopy_options_to_json(o);
    const LoopyResult r = loopy_fit(model, ev, o);
    out["config"] = cfg;
    out["marginals"] = marginals_to_json(model, r.marginals);
    out["converged"] = r.converged;
    out["iterations_used"] = r.iterations_used;
  } else if (a.method == "oracle") {
    const OracleOptions o = cli_detail::oracle_options(a);
    cfg["options"] = Json{{"tree_limit", o.limit}, {"threads", o.threads}};
    const ExactPosterior post = exact_posterior(model, ev, o);
    if (!std::isfinite(post.log_evidence)) throw InferenceError("evidence has zero probability under the model");
    out["config"] = cfg;
    out["marginals"] = marginals_to_json(model, post.node_marginals);
    out["log_evidence"] = post.log_evidence;
  } else {
    throw IoError("--method must be one of svi, mf, loopy, oracle");
  }
  cli_detail::emit(dump_json(out), a.out, os);
  return kExitOk;
}

inline int cmd_oracle(const CliArgs& a, std::ostream& os) {
  const DynamicTreeModel model = load_model_file(a.model_path);
  const Evidence ev = load_evidence(read_text_file(a.evidence_path), &model);
  const OracleOptions o = cli_detail::oracle_options(a);
  if (a.top_k < 0) throw IoError("--top-k must be non-negative");
  const ExactPosterior post = exact_posterior(model, ev, o);
  if (!std::isfinite(post.log_evidence)) throw InferenceError("evidence has zero probability under the model");
  Json out;
  out["format_version"] = kFormatVersion;
  Json cfg = cli_detail::base_config("oracle", a);
  cfg["tree_limit"] = o.limit;
  cfg["threads"] = o.threads;
  cfg["top_k"] = a.top_k;
  out["config"] = cfg;
  const Json body = exact_posterior_to_json(model, post, static_cast<std::size_t>(a.top_k));
  for (const auto& [k, v] : body.items()) out[k] = v;
  cli_detail::emit(dump_json(out), a.out, os);
  return kExitOk;
}

struct CompareRow {
  NodeRef node;
  std::vector<double> truth, svi, loopy;
};

inline std::string compare_table_text(const std::vector<CompareRow>& rows, double kl_svi, double kl_loopy) {
  auto cell = [](const std::vector<double>& p) {
    std::string c;
    for (double x : p) c += (c.empty() ? "" : " ") + cli_detail::fixed(x, 4);
    return c;
  };
  const std::size_t width = std::max<std::size_t>(rows.empty() ? 0 : cell(rows[0].truth).size(), 13);
  auto pad = [&](std::string c) { return c.append(width - std::min(width, c.size()), ' '); };
  std::ostringstream os;
  os << "node   | " << pad("true marginal") << " | " << pad("variational") << " | loopy\n";
  for (const CompareRow& r : rows) {
    os << std::left << std::setw(6) << to_string(r.node) << " | " << pad(cell(r.truth)) << " | " << pad(cell(r.svi))
       << " | " << cell(r.loopy) << "\n";
  }
  os << "summed KL(true || variational) = " << cli_detail::fixed(kl_svi, 6) << "\n";
  os << "summed KL(true || loopy)       = " << cli_detail::fixed(kl_loopy, 6) << "\n";
  return os.str();
}

inline int cmd_compare(const CliArgs& a, std::ostream& os) {
  const DynamicTreeModel model = load_model_file(a.model_path);
  const Evidence ev = load_evidence(read_text_file(a.evidence_path), &model);
  FitOptions svi_opts{1000, 1e-6, 0.0};
  if (a.max_passes) svi_opts.max_passes = *a.max_passes;
  if (a.tolerance) svi_opts.kl_tolerance = *a.tolerance;
  if (svi_opts.max_passes < 1 || !(svi_opts.kl_tolerance > 0.0)) throw IoError("invalid --max-passes or --tolerance");
  const LoopyOptions loopy_opts{};

  const ExactPosterior truth = exact_posterior(model, ev, cli_detail::oracle_options(a));
  if (!std::isfinite(truth.log_evidence)) throw InferenceError("evidence has zero probability under the model");
  const StructuredPosterior svi = svi_fit(model, ev, svi_opts);
  const LoopyResult loopy = loopy_fit(model, ev, loopy_opts);

  std::vector<CompareRow> rows;
  Marginals t, s, l;
  for (int i = 0; i < model.num_nodes(); ++i) {
    if (model.is_bottom(i)) continue;
    rows.push_back({model.ref(i), truth.node_marginals[i], svi.means[i], loopy.marginals[i]});
    t.push_back(truth.node_marginals[i]);
    s.push_back(svi.means[i]);
    l.push_back(loopy.marginals[i]);
  }
  const double kl_svi = marginal_kl_sum(t, s);
  const double kl_loopy = marginal_kl_sum(t, l);

  if (a.format == "text") {
    cli_detail::emit(compare_table_text(rows, kl_svi, kl_loopy), a.out, os);
    return kExitOk;
  }
  if (a.format != "json") throw IoError("--format must be json or text");
  Json out;
  out["format_version"] = kFormatVersion;
  Json cfg = cli_detail::base_config("compare", a);
  cfg["tree_limit"] = a.tree_limit;
  cfg["svi"] = fit_options_to_json(svi_opts);
  cfg["loopy"] = loopy_options_to_json(loopy_opts);
  out["config"] = cfg;
  Json nodes = Json::array();
  for (const CompareRow& r : rows) {
    nodes.push_back(Json{{"node", Json::array({r.node.layer, r.node.index})},
                         {"true", r.truth}, {"svi", r.svi}, {"loopy", r.loopy}});
  }
  out["nodes"] = nodes;
  out["kl"] = Json{{"svi", kl_svi}, {"loopy", kl_loopy}};
  out["loopy_converged"] = loopy.converged;
  cli_detail::emit(dump_json(out), a.out, os);
  return kExitOk;
}

inline int cmd_learn(const CliArgs& a, std::ostream& os) {
  const DynamicTreeModel model = load_model_file(a.model_path);
  const std::vector<Evidence> data = dataset_from_json(parse_json(read_text_file(a.dataset_path), "dataset"), &model);
  if (data.empty()) throw IoError("dataset: no cases");
  if (a.iterations < 0) throw IoError("--iterations must be non-negative");
  EmOptions o;
  o.iterations = a.iterations;
  o.threads = a.threads;
  o.fit = cli_detail::svi_options(a);
  const EmResult r = em_fit(model, data, o);
  Json doc = model_to_json(r.model);
  Json cfg = cli_detail::base_config("learn", a);
  cfg["dataset"] = a.dataset_path;
  cfg["iterations"] = o.iterations;
  cfg["threads"] = o.threads;
  cfg["svi"] = fit_options_to_json(o.fit);
  doc["training"] = Json{{"config", cfg}, {"total_free_energy", r.total_free_energy}};
  cli_detail::emit(dump_json(doc), a.out, os);
  return kExitOk;
}

inline int cmd_experiment(const CliArgs& a, bool seed_given, bool threads_given, std::ostream& os) {
  const Json cfg = cli_detail::with_overrides(cli_detail::load_config_json(a.config_path), a, seed_given, threads_given);
  const std::string name = cfg.value("experiment", std::string("marginal_comparison"));
  ComparisonReport report;
  if (name == "marginal_comparison") {
    report = run_marginal_comparison(marginal_config_from_json(cfg));
  } else if (name == "free_energy_comparison") {
    report = run_free_energy_comparison(free_energy_config_from_json(cfg));
  } else {
    throw IoError("config: unknown experiment '" + name + "'");
  }
  if (a.out.empty()) throw IoError("--out must name an output directory");
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create directory " + a.out + ": " + ec.message());
  const std::filesystem::path dir(a.out);
  write_text_file((dir / "report.json").string(), dump_json(report_to_json(report)));
  write_text_file((dir / "results.csv").string(), report_csv(report));
  write_text_file((dir / "timing.json").string(), dump_json(report_timing_json(report)));

  const ReportSummary& s = report.summary;
  os << report.experiment << ": " << s.runs - s.failed << "/" << s.runs << " runs ok\n";
  for (const auto& m : s.methods) {
    os << "  " << m.method << " mean " << m.mean << " (se " << m.std_error << ")\n";
  }
  os << "  " << report.method_order[0] << " not worse in " << cli_detail::fixed(100.0 * s.first_wins, 1)
     << "% of runs\n";
  return s.failed == s.runs ? kExitCompute : kExitOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Structured variational inference for dynamic trees"};
  app.require_subcommand(1);
  CliArgs a;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", a.seed, "master seed")->capture_default_str();
    c->add_option("--out", a.out, "output path (stdout if omitted)");
    c->add_option("--threads", a.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  };
  auto io_pair = [&](CLI::App* c) {
    c->add_option("--model", a.model_path, "model file")->required();
    c->add_option("--evidence", a.evidence_path, "evidence file")->required();
  };
  auto fit_flags = [&](CLI::App* c) {
    c->add_option("--max-passes", a.max_passes, "iteration cap");
    c->add_option("--tolerance", a.tolerance, "convergence threshold");
  };

  CLI::App* gen = app.add_subcommand("generate", "build an experiment model and optionally sample data");
  common(gen);
  gen->add_option("--kind", a.kind, "marginal_comparison or free_energy_comparison")->capture_default_str();
  gen->add_option("--config", a.config_path, "experiment config overriding defaults");
  gen->add_option("--evidence-out", a.evidence_out, "write one evidence case sampled from the prior");
  gen->add_option("--dataset-out", a.dataset_out, "write a dataset sampled from the prior");
  gen->add_option("--cases", a.cases, "dataset size")->capture_default_str();

  CLI::App* infer = app.add_subcommand("infer", "posterior marginals by one method");
  common(infer);
  io_pair(infer);
  fit_flags(infer);
  infer->add_option("--method", a.method, "svi, mf, loopy or oracle")
      ->capture_default_str()
      ->check(CLI::IsMember({"svi", "mf", "loopy", "oracle"}));
  infer->add_option("--tree-limit", a.tree_limit, "largest tree count the oracle enumerates")->capture_default_str();

  CLI::App* orc = app.add_subcommand("oracle", "exact posterior by enumerating trees");
  common(orc);
  io_pair(orc);
  orc->add_option("--tree-limit", a.tree_limit)->capture_default_str();
  orc->add_option("--top-k", a.top_k, "number of most probable trees to list")->capture_default_str();

  CLI::App* cmp = app.add_subcommand("compare", "true, variational and loopy marginals side by side");
  common(cmp);
  io_pair(cmp);
  fit_flags(cmp);
  cmp->add_option("--tree-limit", a.tree_limit)->capture_default_str();
  cmp->add_option("--format", a.format, "json or text")->capture_default_str()->check(CLI::IsMember({"json", "text"}));

  CLI::App* learn = app.add_subcommand("learn", "variational EM on a dataset");
  common(learn);
  fit_flags(learn);
  learn->add_option("--model", a.model_path, "initial model")->required();
  learn->add_option("--dataset", a.dataset_path, "dataset file")->required();
  learn->add_option("--iterations", a.iterations, "EM iterations")->capture_default_str();

  CLI::App* exp = app.add_subcommand("experiment", "run a comparison experiment from a config file");
  common(exp);
  exp->add_option("--config", a.config_path, "experiment config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    app.exit(e, msg, msg);
    err << msg.str();
    return e.get_exit_code() == 0 ? kExitOk : kExitInput;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const bool seed_given = chosen->count("--seed") > 0;
  const bool threads_given = chosen->count("--threads") > 0;
  try {
    const std::string name = chosen->get_name();
    if (name == "generate") return cmd_generate(a, seed_given, threads_given, out);
    if (name == "infer") return cmd_infer(a, out);
    if (name == "oracle") return cmd_oracle(a, out);
    if (name == "compare") return cmd_compare(a, out);
    if (name == "learn") return cmd_learn(a, out);
    return cmd_experiment(a, seed_given, threads_given, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ModelError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const InferenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCompute;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCompute;
  }
}

}  // namespace dyntree
