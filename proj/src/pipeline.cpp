#include "qacal/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "qacal/error.hpp"
#include "qacal/guarantees.hpp"
#include "qacal/random.hpp"

namespace qacal {

using nlohmann::json;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------- config

json SweepConfig::to_json() const {
  json methods_j = json::array();
  for (auto m : methods) methods_j.push_back(qacal::to_string(m));
  return {{"depths", depths},       {"b_grid", b_grid},
          {"B_grid", B_grid},       {"variance_grid", variance_grid},
          {"seeds", seeds},         {"methods", methods_j},
          {"fractions", fractions}, {"alpha", alpha},
          {"eps_grid", eps_grid},   {"nu_grid", nu_grid},
          {"eval_depth", eval_depth}, {"ce_bins", ce_bins},
          {"auac_grid", auac_grid}, {"delta", delta},
          {"scaler_split", scaler_split}, {"threads", threads}};
}

SweepConfig SweepConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("sweep config must be a JSON object");
  static const std::set<std::string> known{
      "depths",   "b_grid",   "B_grid",     "variance_grid", "seeds",     "methods",
      "fractions", "alpha",   "eps_grid",   "nu_grid",       "eval_depth", "ce_bins",
      "auac_grid", "delta",   "scaler_split", "threads"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ValidationError("unknown sweep config key \"" + k + "\"");
  SweepConfig c;
  try {
    if (j.contains("depths")) c.depths = j["depths"].get<std::vector<int>>();
    if (j.contains("b_grid")) c.b_grid = j["b_grid"].get<std::vector<int>>();
    if (j.contains("B_grid")) c.B_grid = j["B_grid"].get<std::vector<int>>();
    if (j.contains("variance_grid")) c.variance_grid = j["variance_grid"].get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::array<double, 4>>();
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("eps_grid")) c.eps_grid = j["eps_grid"].get<std::vector<double>>();
    if (j.contains("nu_grid")) c.nu_grid = j["nu_grid"].get<std::vector<double>>();
    c.eval_depth = j.value("eval_depth", c.eval_depth);
    c.ce_bins = j.value("ce_bins", c.ce_bins);
    c.auac_grid = j.value("auac_grid", c.auac_grid);
    c.delta = j.value("delta", c.delta);
    c.scaler_split = j.value("scaler_split", c.scaler_split);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sweep config: ") + e.what());
  }
  return c;
}

bool within_bin_envelope(std::size_t n_cal, int depth, int b) {
  if (b < 1 || depth < 0 || depth > 62) return false;
  const std::size_t per_partition = n_cal >> depth;
  const std::size_t bins = per_partition / static_cast<std::size_t>(b);
  return bins >= 3 && bins <= 10;
}

std::vector<int> derive_b_grid(std::size_t n_cal, const SweepConfig& cfg) {
  std::set<int> out;
  for (double eps : cfg.eps_grid)
    for (double nu : cfg.nu_grid)
      if (auto b = choose_b(n_cal, cfg.alpha, nu, eps)) out.insert(*b);
  return {out.begin(), out.end()};
}

std::vector<int> derive_B_grid(std::size_t n_cal, const SweepConfig& cfg) {
  std::set<int> out;
  for (double eps : cfg.eps_grid)
    if (auto B = choose_num_bins(n_cal, cfg.alpha, 0.0, eps)) out.insert(*B);
  return {out.begin(), out.end()};
}

json Hyperparameters::to_json() const {
  json j = json::object();
  if (depth) j["depth"] = *depth;
  if (b) j["b"] = *b;
  if (num_bins) j["B"] = *num_bins;
  if (sigma_u2) j["sigma_u2"] = *sigma_u2;
  if (sigma_v2) j["sigma_v2"] = *sigma_v2;
  return j;
}

// ---------------------------------------------------------------- sweep

namespace {

struct SeedContext {
  std::uint64_t seed = 0;
  DatasetSplit split;
  std::map<int, std::shared_ptr<const Partitioner>> trees;  // by depth
  std::vector<PartitionId> tune_parts;  // under the evaluation tree
  std::vector<PartitionId> test_parts;
  std::string error;
};

SeedContext make_context(const Dataset& data, const SweepConfig& cfg, std::uint64_t seed) {
  SeedContext ctx;
  ctx.seed = seed;
  try {
    ctx.split = split_dataset(data, {cfg.fractions, seed});
    if (ctx.split.tune.empty() || ctx.split.test.empty() || ctx.split.cal.empty())
      throw ValidationError("split leaves an empty calibration, tuning or test part");
    const auto points = embeddings_of(ctx.split.tree);
    std::set<int> depths(cfg.depths.begin(), cfg.depths.end());
    depths.insert(cfg.eval_depth);
    for (int d : depths)
      ctx.trees[d] = std::make_shared<KdTreePartitioner>(KdTreePartitioner::build(points, d));
    const auto& eval = *ctx.trees.at(cfg.eval_depth);
    ctx.tune_parts = assign_all(eval, ctx.split.tune);
    ctx.test_parts = assign_all(eval, ctx.split.test);
  } catch (const std::exception& e) {
    ctx.error = e.what();
  }
  return ctx;
}

MetricsReport score(const FittedCalibrator& fc, const Dataset& d, const std::vector<PartitionId>& parts,
                    const SweepConfig& cfg) {
  const auto pred = fc.predict_all(d);
  std::vector<EvalRecord> recs;
  recs.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) recs.push_back({parts[i], pred[i], d.records[i].label});
  return evaluate_metrics(recs, cfg.ce_bins, cfg.auac_grid);
}

struct Candidate {
  Hyperparameters hyper;
  FitConfig fit;
};

std::vector<Candidate> candidates(Method m, const SweepConfig& cfg, std::size_t n_cal,
                                  std::uint64_t seed) {
  FitConfig base;
  base.method = m;
  base.delta = cfg.delta;
  base.split_fraction = cfg.scaler_split;
  base.variance_grid = cfg.variance_grid;
  base.seed = derive_seed(seed, 0x5ca1eULL);

  std::vector<Candidate> out;
  switch (m) {
    case Method::kNone:
    case Method::kPlatt:
      out.push_back({{}, base});
      break;
    case Method::kUmd:
    case Method::kScaleBin:
      for (int B : cfg.B_grid) {
        Candidate c{{}, base};
        c.hyper.num_bins = B;
        c.fit.num_bins = B;
        out.push_back(c);
      }
      break;
    case Method::kQab:
    case Method::kSQab:
    case Method::kHsQab: {
      std::vector<int> depths = cfg.depths;
      std::sort(depths.begin(), depths.end());
      depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
      for (int d : depths)
        for (int b : cfg.b_grid) {
          if (!within_bin_envelope(n_cal, d, b)) continue;
          Candidate c{{}, base};
          c.hyper.depth = d;
          c.hyper.b = b;
          c.fit.b = b;
          out.push_back(c);
        }
      break;
    }
  }
  return out;
}

// Max tuning AUAC, then lower tuning CE(h;beta), then smaller depth. Earlier
// candidates win remaining ties, which keeps the choice deterministic.
bool better(const MetricsReport& a, const Hyperparameters& ha, const MetricsReport& b,
            const Hyperparameters& hb) {
  if (a.auac != b.auac) return a.auac > b.auac;
  if (a.ce_beta != b.ce_beta) return a.ce_beta < b.ce_beta;
  return ha.depth.value_or(0) < hb.depth.value_or(0);
}

void run_cell(const SeedContext& ctx, Method m, const SweepConfig& cfg,
              std::optional<RunResult>& result, std::optional<CellFailure>& failure) {
  if (!ctx.error.empty()) {
    failure = CellFailure{m, ctx.seed, ctx.error};
    return;
  }
  const auto cands = candidates(m, cfg, ctx.split.cal.size(), ctx.seed);
  if (cands.empty()) {
    failure = CellFailure{m, ctx.seed, "no hyperparameter candidate inside the search grid"};
    return;
  }
  std::optional<FittedCalibrator> best_fc;
  Hyperparameters best_h;
  MetricsReport best_tune;
  std::string first_error;
  for (const auto& c : cands) {
    try {
      std::shared_ptr<const Partitioner> part;
      if (c.hyper.depth) part = ctx.trees.at(*c.hyper.depth);
      auto fc = fit_calibrator(ctx.split.cal, c.fit, part, &ctx.split.tune);
      auto tune = score(fc, ctx.split.tune, ctx.tune_parts, cfg);
      if (!best_fc || better(tune, c.hyper, best_tune, best_h)) {
        best_h = c.hyper;
        if (m == Method::kHsQab) {
          best_h.sigma_u2 = fc.config().sigma_u2;
          best_h.sigma_v2 = fc.config().sigma_v2;
        }
        best_tune = std::move(tune);
        best_fc = std::move(fc);
      }
    } catch (const std::exception& e) {
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!best_fc) {
    failure = CellFailure{m, ctx.seed, first_error};
    return;
  }
  try {
    result = RunResult{m, ctx.seed, best_h, best_tune, score(*best_fc, ctx.split.test, ctx.test_parts, cfg)};
  } catch (const std::exception& e) {
    failure = CellFailure{m, ctx.seed, e.what()};
  }
}

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) body(i);
  };
  const unsigned t = static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(threads, n)));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < t; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace

SweepReport run_sweep(const Dataset& data, SweepConfig cfg) {
  validate_dataset(data);
  if (cfg.seeds.empty()) throw ValidationError("sweep needs at least one seed");
  if (cfg.methods.empty()) throw ValidationError("sweep needs at least one method");
  if (cfg.depths.empty()) throw ValidationError("sweep needs at least one depth");
  for (int d : cfg.depths)
    if (d < 0 || d > 20) throw ValidationError("kd-tree depth must lie in [0, 20]");
  if (cfg.eval_depth < 0 || cfg.eval_depth > 20) throw ValidationError("eval_depth must lie in [0, 20]");

  const std::size_t n_cal = split_sizes(data.size(), cfg.fractions)[1];
  if (cfg.b_grid.empty()) cfg.b_grid = derive_b_grid(n_cal, cfg);
  if (cfg.B_grid.empty()) cfg.B_grid = derive_B_grid(n_cal, cfg);
  for (int b : cfg.b_grid)
    if (b < 2) throw ValidationError("b_grid entries must be >= 2");
  for (int B : cfg.B_grid)
    if (B < 1) throw ValidationError("B_grid entries must be >= 1");

  std::vector<SeedContext> contexts(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads,
               [&](std::size_t i) { contexts[i] = make_context(data, cfg, cfg.seeds[i]); });

  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_cells = cfg.methods.size() * n_seeds;
  std::vector<std::optional<RunResult>> results(n_cells);
  std::vector<std::optional<CellFailure>> failures(n_cells);
  parallel_for(n_cells, cfg.threads, [&](std::size_t i) {
    run_cell(contexts[i % n_seeds], cfg.methods[i / n_seeds], cfg, results[i], failures[i]);
  });

  SweepReport rep;
  rep.config = cfg;
  rep.n_records = data.size();
  for (std::size_t i = 0; i < n_cells; ++i) {
    if (results[i]) rep.results.push_back(std::move(*results[i]));
    if (failures[i]) rep.failures.push_back(std::move(*failures[i]));
  }
  auto key = [](Method m, std::uint64_t s) { return std::pair{static_cast<int>(m), s}; };
  std::stable_sort(rep.results.begin(), rep.results.end(),
                   [&](const auto& a, const auto& b) { return key(a.method, a.seed) < key(b.method, b.seed); });
  std::stable_sort(rep.failures.begin(), rep.failures.end(),
                   [&](const auto& a, const auto& b) { return key(a.method, a.seed) < key(b.method, b.seed); });
  return rep;
}

// ---------------------------------------------------------------- reports

namespace {

MetricSummary summarize_values(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string opt_int(const std::optional<int>& x) { return x ? std::to_string(*x) : ""; }
std::string opt_double(const std::optional<double>& x) { return x ? format_double(*x) : ""; }

// Quotes a CSV field when it needs it.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

std::vector<MethodSummary> summarize(const SweepReport& report) {
  std::vector<MethodSummary> out;
  for (Method m : report.config.methods) {
    std::vector<double> ce, ceb, mce, mceb, auac;
    for (const auto& r : report.results) {
      if (r.method != m) continue;
      ce.push_back(r.test.ce);
      ceb.push_back(r.test.ce_beta);
      mce.push_back(r.test.mce);
      mceb.push_back(r.test.mce_beta);
      auac.push_back(r.test.auac);
    }
    out.push_back({m, ce.size(), summarize_values(ce), summarize_values(ceb), summarize_values(mce),
                   summarize_values(mceb), summarize_values(auac)});
  }
  return out;
}

void write_reports(const SweepReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto f = format_double;

  {
    auto out = open_out(out_dir / "results.csv");
    out << "method,seed,depth,b,B,sigma_u2,sigma_v2,n_test,ce,ce_beta,mce,mce_beta,auac,"
           "tune_auac,tune_ce_beta\n";
    for (const auto& r : report.results) {
      const auto& h = r.hyper;
      out << display_name(r.method) << ',' << r.seed << ',' << opt_int(h.depth) << ',' << opt_int(h.b)
          << ',' << opt_int(h.num_bins) << ',' << opt_double(h.sigma_u2) << ','
          << opt_double(h.sigma_v2) << ',' << r.test.n << ',' << f(r.test.ce) << ','
          << f(r.test.ce_beta) << ',' << f(r.test.mce) << ',' << f(r.test.mce_beta) << ','
          << f(r.test.auac) << ',' << f(r.tune.auac) << ',' << f(r.tune.ce_beta) << '\n';
    }
  }
  {
    auto out = open_out(out_dir / "per_partition.csv");
    out << "method,seed,partition,n,ce,mce\n";
    for (const auto& r : report.results)
      for (const auto& [s, pc] : r.test.per_partition)
        out << display_name(r.method) << ',' << r.seed << ',' << s << ',' << pc.n << ',' << f(pc.ce)
            << ',' << f(pc.mce) << '\n';
  }
  const auto summaries = summarize(report);
  {
    auto out = open_out(out_dir / "summary.csv");
    out << "method,n_seeds,ce_mean,ce_sd,ce_beta_mean,ce_beta_sd,mce_mean,mce_sd,mce_beta_mean,"
           "mce_beta_sd,auac_mean,auac_sd\n";
    for (const auto& s : summaries)
      out << display_name(s.method) << ',' << s.n_seeds << ',' << f(s.ce.mean) << ',' << f(s.ce.sd)
          << ',' << f(s.ce_beta.mean) << ',' << f(s.ce_beta.sd) << ',' << f(s.mce.mean) << ','
          << f(s.mce.sd) << ',' << f(s.mce_beta.mean) << ',' << f(s.mce_beta.sd) << ','
          << f(s.auac.mean) << ',' << f(s.auac.sd) << '\n';
  }
  {
    json j = json::object();
    j["n_records"] = report.n_records;
    j["aggregation"] = "mean and sample standard deviation over seeds";
    json methods = json::array();
    for (const auto& s : summaries) {
      auto ms = [](const MetricSummary& m) { return json{{"mean", m.mean}, {"sd", m.sd}}; };
      methods.push_back({{"method", display_name(s.method)},
                         {"n_seeds", s.n_seeds},
                         {"ce", ms(s.ce)},
                         {"ce_beta", ms(s.ce_beta)},
                         {"mce", ms(s.mce)},
                         {"mce_beta", ms(s.mce_beta)},
                         {"auac", ms(s.auac)}});
    }
    j["methods"] = methods;
    json runs = json::array();
    for (const auto& r : report.results)
      runs.push_back({{"method", display_name(r.method)},
                      {"seed", r.seed},
                      {"hyperparameters", r.hyper.to_json()},
                      {"test", r.test.to_json()}});
    j["runs"] = runs;
    auto out = open_out(out_dir / "summary.json");
    out << j.dump(2) << '\n';
  }
  {
    auto out = open_out(out_dir / "failures.csv");
    out << "method,seed,reason\n";
    for (const auto& fl : report.failures)
      out << display_name(fl.method) << ',' << fl.seed << ',' << csv_field(fl.reason) << '\n';
  }
  {
    auto out = open_out(out_dir / "resolved_config.json");
    auto j = report.config.to_json();
    j.erase("threads");  // scheduling only; must not change the report bytes
    out << j.dump(2) << '\n';
  }
}

}  // namespace qacal
