#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "qacal/bundle.hpp"
#include "qacal/dataset.hpp"
#include "qacal/error.hpp"
#include "qacal/guarantees.hpp"
#include "qacal/metrics.hpp"
#include "qacal/partitioner.hpp"
#include "qacal/pipeline.hpp"

namespace qacal {

using nlohmann::json;

namespace {

std::uint64_t env_seed() {
  if (const char* s = std::getenv("QACAL_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ValidationError("QACAL_SEED is not an unsigned integer");
    }
  }
  return 0;
}

unsigned env_thread_cap(unsigned requested) {
  unsigned t = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* s = std::getenv("QACAL_THREADS")) {
    const long cap = std::strtol(s, nullptr, 10);
    if (cap >= 1) t = std::min<unsigned>(t, static_cast<unsigned>(cap));
  }
  return t;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

// Raw JSON objects of a JSONL file, blank lines skipped.
std::vector<json> read_jsonl_objects(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ValidationError("not a number: \"" + tok + "\"");
    }
  }
  return out;
}

// ------------------------------------------------------------- subcommands

struct IngestArgs {
  std::string in;
  std::optional<std::size_t> dim;
};

void cmd_ingest(const IngestArgs& a, std::ostream& out) {
  const Dataset d = load_dataset(a.in, a.dim);
  std::size_t proxies = 0;
  for (const auto& r : d.records) proxies += r.label_kind == LabelKind::kProxy ? 1 : 0;
  out << "records " << d.size() << "\nembedding_dim " << d.embedding_dim << "\nground_truth "
      << d.size() - proxies << "\nproxy " << proxies << '\n';
}

struct SplitArgs {
  std::string in;
  std::uint64_t seed = 0;
  std::string fractions = "0.2,0.6,0.1,0.1";
  std::string out_dir;
};

void cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto fr = parse_double_list(a.fractions);
  if (fr.size() != 4) throw ValidationError("--fractions needs four values");
  const Dataset d = load_dataset(a.in);
  const auto parts = split_dataset(d, {{fr[0], fr[1], fr[2], fr[3]}, a.seed});
  const std::filesystem::path in(a.in);
  const auto dir = a.out_dir.empty() ? in.parent_path() : std::filesystem::path(a.out_dir);
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string stem = in.stem().string();
  const std::pair<const char*, const Dataset*> named[] = {
      {"tree", &parts.tree}, {"cal", &parts.cal}, {"tune", &parts.tune}, {"test", &parts.test}};
  for (const auto& [name, ds] : named) {
    const auto path = dir / (stem + "." + name + ".jsonl");
    save_dataset(path, *ds);
    out << name << ' ' << ds->size() << ' ' << path.string() << '\n';
  }
}

struct PartitionArgs {
  std::string in;
  std::string kind = "kdtree";
  int depth = 2;
  std::size_t k = 4;
  std::string order = "cycle";
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_partition(const PartitionArgs& a, std::ostream& out) {
  const Dataset d = load_dataset(a.in);
  const auto points = embeddings_of(d);
  if (a.kind == "kdtree") {
    const auto order = a.order == "max-variance" ? SplitDimOrder::kMaxVariance : SplitDimOrder::kCycle;
    const auto p = KdTreePartitioner::build(points, a.depth, order);
    save_partitioner(a.out, p);
    out << "kdtree partitions " << p.num_partitions() << " id " << p.id() << '\n';
  } else {
    const auto p = KMeansPartitioner::build(points, a.k, a.seed.value_or(env_seed()));
    save_partitioner(a.out, p);
    out << "kmeans partitions " << p.num_partitions() << " id " << p.id() << '\n';
  }
}

struct FitArgs {
  std::string method;
  std::string train;
  std::string partitioner;
  std::string tune;
  int b = 50;
  int num_bins = 10;
  double delta = kDefaultTieBreakDelta;
  std::optional<double> sigma_u2, sigma_v2;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_fit(const FitArgs& a, std::ostream& out) {
  FitConfig cfg;
  cfg.method = method_from_string(a.method);
  if (uses_partitioner(cfg.method) && a.partitioner.empty())
    throw ValidationError("--partitioner is required for --method " + a.method);
  cfg.b = a.b;
  cfg.num_bins = a.num_bins;
  cfg.delta = a.delta;
  cfg.sigma_u2 = a.sigma_u2;
  cfg.sigma_v2 = a.sigma_v2;
  cfg.seed = a.seed.value_or(env_seed());
  const Dataset train = load_dataset(a.train);
  std::shared_ptr<const Partitioner> part;
  if (!a.partitioner.empty()) part = load_partitioner(a.partitioner);
  std::optional<Dataset> tune;
  if (!a.tune.empty()) tune = load_dataset(a.tune, train.embedding_dim);
  const auto fc = fit_calibrator(train, cfg, part, tune ? &*tune : nullptr);
  fc.save(a.out);
  out << "method " << to_string(fc.method()) << " nu_hat " << format_double(fc.nu_hat()) << " bundle "
      << a.out << '\n';
}

struct PredictArgs {
  std::string bundle, in, out;
};

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto fc = FittedCalibrator::load(a.bundle);
  const Dataset d = load_dataset(a.in);
  auto raw = read_jsonl_objects(a.in);
  const auto pred = fc.predict_all(d);
  auto o = open_out(a.out);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i]["calibrated"] = pred[i];
    o << raw[i].dump() << '\n';
  }
  out << "predicted " << pred.size() << " records\n";
}

struct EvaluateArgs {
  std::string in, partitioner, out;
  std::string score = "auto";
  int grid = kDefaultAuacGrid;
  int bins = kDefaultCeBins;
};

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Dataset d = load_dataset(a.in);
  const auto raw = read_jsonl_objects(a.in);
  const auto part = load_partitioner(a.partitioner);
  bool use_calibrated = a.score == "calibrated";
  if (a.score == "auto") use_calibrated = !raw.empty() && raw.front().contains("calibrated");
  std::vector<EvalRecord> recs;
  recs.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = d.records[i];
    double h = r.confidence;
    if (use_calibrated) {
      if (!raw[i].contains("calibrated")) throw ValidationError("line " + std::to_string(i + 1) + ": no calibrated field");
      h = raw[i]["calibrated"].get<double>();
    }
    recs.push_back({part->assign(r.embedding), h, r.label});
  }
  auto rep = evaluate_metrics(recs, a.bins, a.grid).to_json();
  rep["score"] = use_calibrated ? "calibrated" : "confidence";
  if (!a.out.empty()) open_out(a.out) << rep.dump(2) << '\n';
  out << "ce " << format_double(rep["ce"]) << "\nce_beta " << format_double(rep["ce_beta"])
      << "\nmce " << format_double(rep["mce"]) << "\nmce_beta " << format_double(rep["mce_beta"])
      << "\nauac " << format_double(rep["auac"]) << '\n';
}

struct SweepArgs {
  std::string config, data, out_dir;
  std::optional<unsigned> threads;
  std::string seeds;
};

void cmd_sweep(const SweepArgs& a, std::ostream& out) {
  SweepConfig cfg = a.config.empty() ? SweepConfig{} : SweepConfig::from_json(read_json_file(a.config));
  if (!a.seeds.empty()) {
    cfg.seeds.clear();
    for (double s : parse_double_list(a.seeds)) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  } else if (a.config.empty() && std::getenv("QACAL_SEED")) {
    const auto base = env_seed();
    for (auto& s : cfg.seeds) s += base;
  }
  if (a.threads) cfg.threads = *a.threads;
  cfg.threads = env_thread_cap(cfg.threads);
  const Dataset d = load_dataset(a.data);
  const auto rep = run_sweep(d, cfg);
  write_reports(rep, a.out_dir);
  for (const auto& s : summarize(rep))
    out << display_name(s.method) << " ce_beta " << format_double(s.ce_beta.mean) << " auac "
        << format_double(s.auac.mean) << " seeds " << s.n_seeds << '\n';
  for (const auto& f : rep.failures)
    out << "failed " << display_name(f.method) << " seed " << f.seed << ": " << f.reason << '\n';
}

struct SimulateArgs {
  std::string spec;
  int trials = 200;
  double alpha = 0.1;
  int b = 0;
  int depth = 2;
  double label_shift = 0.0;
  unsigned threads = 1;
  std::string out;
};

void cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto spec = SyntheticSpec::from_json(read_json_file(a.spec));
  const std::size_t n = spec.n_partitions * spec.points_per_partition;
  int b = a.b;
  if (b == 0) {
    const auto chosen = choose_b(n, a.alpha, a.label_shift, 0.15);
    if (!chosen) throw ValidationError("no feasible b for epsilon 0.15; pass --b");
    b = *chosen;
  }
  GuaranteeOptions opts;
  opts.label_shift = a.label_shift;
  opts.threads = env_thread_cap(a.threads);
  const auto res = validate_conditional_guarantee(spec, a.depth, b, a.alpha, a.trials, opts);
  out << "coverage " << format_double(res.coverage) << " worst_gap " << format_double(res.worst_gap)
      << " epsilon " << format_double(res.epsilon) << " b " << b << " trials " << a.trials << '\n';
  std::ostringstream csv;
  csv << "trial,passed,worst_gap,bins_checked,epsilon\n";
  for (std::size_t t = 0; t < res.trials.size(); ++t)
    csv << t << ',' << (res.trials[t].passed ? 1 : 0) << ',' << format_double(res.trials[t].worst_gap)
        << ',' << res.trials[t].bins_checked << ',' << format_double(res.epsilon) << '\n';
  if (a.out.empty())
    out << csv.str();
  else
    open_out(a.out) << csv.str();
}

struct GenerateArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  auto spec = SyntheticSpec::from_json(read_json_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const Dataset d = generate_synthetic(spec);
  save_dataset(a.out, d);
  out << "records " << d.size() << " embedding_dim " << d.embedding_dim << '\n';
}

struct BoundArgs {
  std::size_t n = 0;
  std::optional<int> b;
  std::optional<double> eps;
  double alpha = 0.1;
  double nu = 0.0;
  bool umd = false;
  int num_bins = 0;
  std::string curve_csv;
  int b_lo = 2;
  int b_hi = 0;
  std::string curve_nus;
};

void cmd_bound(const BoundArgs& a, std::ostream& out) {
  if (a.umd) {
    if (a.num_bins < 1) throw ValidationError("--umd needs --B");
    out << "epsilon " << format_double(epsilon_bound_umd(a.n, a.num_bins, a.alpha, a.nu)) << '\n';
    return;
  }
  if (!a.curve_csv.empty()) {
    const auto nus = a.curve_nus.empty() ? std::vector<double>{a.nu} : parse_double_list(a.curve_nus);
    const int hi = a.b_hi > 0 ? a.b_hi : static_cast<int>(a.n);
    auto o = open_out(a.curve_csv);
    o << "b,N,nu,epsilon\n";
    for (const auto& r : epsilon_curve(a.n, a.alpha, nus, a.b_lo, hi))
      o << r.b << ',' << r.n << ',' << format_double(r.nu) << ',' << format_double(r.epsilon) << '\n';
  }
  if (a.b) {
    out << "epsilon " << format_double(epsilon_bound_qa({a.n, *a.b, a.alpha, a.nu})) << '\n';
  } else if (a.eps) {
    const auto b = choose_b(a.n, a.alpha, a.nu, *a.eps);
    if (!b) throw ValidationError("infeasible: no b reaches epsilon " + format_double(*a.eps));
    out << "b " << *b << '\n';
  } else if (a.curve_csv.empty()) {
    throw ValidationError("bound needs --b, --eps or --curve-csv");
  }
}

struct ExportArgs {
  std::string in_dir, out;
  std::string format = "md";
};

void cmd_export(const ExportArgs& a, std::ostream& out) {
  const json s = read_json_file((std::filesystem::path(a.in_dir) / "summary.json").string());
  std::ostringstream o;
  auto pm = [](const json& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", m.at("mean").get<double>(), m.at("sd").get<double>());
    return std::string(buf);
  };
  const char* metrics[] = {"ce", "ce_beta", "mce", "mce_beta", "auac"};
  if (a.format == "md") {
    o << "| method | seeds | CE | CE(h;β) | MCE | β-MCE | AUAC |\n|---|---|---|---|---|---|---|\n";
    for (const auto& m : s.at("methods")) {
      o << "| " << m.at("method").get<std::string>() << " | " << m.at("n_seeds").get<int>();
      for (const char* k : metrics) o << " | " << pm(m.at(k));
      o << " |\n";
    }
  } else if (a.format == "csv") {
    o << "method,seeds,ce,ce_beta,mce,mce_beta,auac\n";
    for (const auto& m : s.at("methods")) {
      o << m.at("method").get<std::string>() << ',' << m.at("n_seeds").get<int>();
      for (const char* k : metrics) o << ",\"" << pm(m.at(k)) << '"';
      o << '\n';
    }
  } else {
    throw ValidationError("--format must be md or csv");
  }
  if (a.out.empty())
    out << o.str();
  else
    open_out(a.out) << o.str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"qacal: QA-conditional calibration toolkit"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "validate a JSONL dataset");
  c_ingest->add_option("--in", ingest.in)->required();
  c_ingest->add_option("--expect-dim", ingest.dim);

  SplitArgs split;
  split.seed = 0;
  auto* c_split = app.add_subcommand("split", "seeded tree/cal/tune/test split");
  c_split->add_option("--in", split.in)->required();
  auto* split_seed = c_split->add_option("--seed", split.seed);
  c_split->add_option("--fractions", split.fractions);
  c_split->add_option("--out-dir", split.out_dir);

  PartitionArgs partition;
  auto* c_part = app.add_subcommand("partition", "build a kd-tree or k-means partitioner");
  c_part->add_option("--in", partition.in)->required();
  c_part->add_option("--kind", partition.kind)->check(CLI::IsMember({"kdtree", "kmeans"}));
  c_part->add_option("--depth", partition.depth);
  c_part->add_option("--k", partition.k);
  c_part->add_option("--order", partition.order)->check(CLI::IsMember({"cycle", "max-variance"}));
  c_part->add_option("--seed", partition.seed);
  c_part->add_option("--out", partition.out)->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit a calibrator bundle");
  c_fit->add_option("--method", fit.method)
      ->required()
      ->check(CLI::IsMember({"none", "umd", "platt", "scale-bin", "qab", "s-qab", "hs-qab"}));
  c_fit->add_option("--train", fit.train)->required();
  c_fit->add_option("--partitioner", fit.partitioner);
  c_fit->add_option("--tune", fit.tune, "tuning split for the hs-qab variance search");
  c_fit->add_option("--b", fit.b);
  c_fit->add_option("--B", fit.num_bins);
  c_fit->add_option("--delta", fit.delta);
  c_fit->add_option("--sigma-u2", fit.sigma_u2);
  c_fit->add_option("--sigma-v2", fit.sigma_v2);
  c_fit->add_option("--seed", fit.seed);
  c_fit->add_option("--out", fit.out)->required();

  PredictArgs predict;
  auto* c_pred = app.add_subcommand("predict", "apply a bundle, adding a calibrated field");
  c_pred->add_option("--bundle", predict.bundle)->required();
  c_pred->add_option("--in", predict.in)->required();
  c_pred->add_option("--out", predict.out)->required();

  EvaluateArgs evaluate;
  auto* c_eval = app.add_subcommand("evaluate", "CE, CE(h;beta), MCE, beta-MCE and AUAC");
  c_eval->add_option("--in", evaluate.in)->required();
  c_eval->add_option("--partitioner", evaluate.partitioner)->required();
  c_eval->add_option("--grid", evaluate.grid);
  c_eval->add_option("--bins", evaluate.bins);
  c_eval->add_option("--score", evaluate.score)->check(CLI::IsMember({"auto", "confidence", "calibrated"}));
  c_eval->add_option("--out", evaluate.out);

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "split, tune and evaluate every method over seeds");
  c_sweep->add_option("--config", sweep.config);
  c_sweep->add_option("--data", sweep.data)->required();
  c_sweep->add_option("--out-dir", sweep.out_dir)->required();
  c_sweep->add_option("--threads", sweep.threads);
  c_sweep->add_option("--seeds", sweep.seeds, "comma separated, overrides the config");

  SimulateArgs simulate;
  auto* c_sim = app.add_subcommand("simulate", "Monte-Carlo check of the conditional guarantee");
  c_sim->add_option("--spec", simulate.spec)->required();
  c_sim->add_option("--trials", simulate.trials);
  c_sim->add_option("--alpha", simulate.alpha);
  c_sim->add_option("--b", simulate.b, "0 picks b for epsilon 0.15");
  c_sim->add_option("--depth", simulate.depth);
  c_sim->add_option("--label-shift", simulate.label_shift);
  c_sim->add_option("--threads", simulate.threads);
  c_sim->add_option("--out", simulate.out, "per-trial CSV (stdout when absent)");

  GenerateArgs generate;
  auto* c_gen = app.add_subcommand("generate", "write a synthetic clustered dataset");
  c_gen->add_option("--spec", generate.spec)->required();
  c_gen->add_option("--seed", generate.seed);
  c_gen->add_option("--out", generate.out)->required();

  BoundArgs bound;
  auto* c_bound = app.add_subcommand("bound", "evaluate or invert the epsilon bound");
  c_bound->add_option("--n", bound.n)->required();
  c_bound->add_option("--b", bound.b);
  c_bound->add_option("--eps", bound.eps, "print the smallest b reaching this epsilon");
  c_bound->add_option("--alpha", bound.alpha);
  c_bound->add_option("--nu", bound.nu);
  c_bound->add_flag("--umd", bound.umd);
  c_bound->add_option("--B", bound.num_bins);
  c_bound->add_option("--curve-csv", bound.curve_csv);
  c_bound->add_option("--b-min", bound.b_lo);
  c_bound->add_option("--b-max", bound.b_hi);
  c_bound->add_option("--curve-nus", bound.curve_nus);

  ExportArgs exp;
  auto* c_exp = app.add_subcommand("export-report", "mean ± sd table from a sweep directory");
  c_exp->add_option("--in-dir", exp.in_dir)->required();
  c_exp->add_option("--out", exp.out);
  c_exp->add_option("--format", exp.format);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*c_ingest) cmd_ingest(ingest, out);
    if (*c_split) {
      if (!*split_seed) split.seed = env_seed();
      cmd_split(split, out);
    }
    if (*c_part) cmd_partition(partition, out);
    if (*c_fit) cmd_fit(fit, out);
    if (*c_pred) cmd_predict(predict, out);
    if (*c_eval) cmd_evaluate(evaluate, out);
    if (*c_sweep) cmd_sweep(sweep, out);
    if (*c_sim) cmd_simulate(simulate, out);
    if (*c_gen) cmd_generate(generate, out);
    if (*c_bound) cmd_bound(bound, out);
    if (*c_exp) cmd_export(exp, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace qacal
