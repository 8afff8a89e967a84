#include "qacal/bundle.hpp"

#include <fstream>

#include "qacal/error.hpp"
#include "qacal/scaling_qa_binning.hpp"

namespace qacal {

using nlohmann::json;

namespace {

struct MethodNames {
  Method m;
  const char* cli;
  const char* display;
};

constexpr MethodNames kNames[] = {
    {Method::kNone, "none", "None"},       {Method::kUmd, "umd", "B"},
    {Method::kPlatt, "platt", "S"},        {Method::kScaleBin, "scale-bin", "S-B"},
    {Method::kQab, "qab", "QAB"},          {Method::kSQab, "s-qab", "S-QAB"},
    {Method::kHsQab, "hs-qab", "HS-QAB"},
};

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<ScalerSample> scaler_samples(const Dataset& d, const std::vector<std::size_t>& idx,
                                         const Partitioner* part) {
  std::vector<ScalerSample> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto& r = d.records[i];
    out.push_back({part ? part->assign(r.embedding) : kOutOfBounds, r.confidence, r.label});
  }
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& n : kNames)
    if (n.m == m) return n.cli;
  return "?";
}

std::string display_name(Method m) {
  for (const auto& n : kNames)
    if (n.m == m) return n.display;
  return "?";
}

Method method_from_string(const std::string& s) {
  for (const auto& n : kNames)
    if (s == n.cli || s == n.display) return n.m;
  throw ValidationError("unknown method \"" + s + "\"");
}

bool uses_partitioner(Method m) {
  return m == Method::kQab || m == Method::kSQab || m == Method::kHsQab;
}

json FitConfig::to_json() const {
  json j{{"method", qacal::to_string(method)},
         {"b", b},
         {"B", num_bins},
         {"delta", delta},
         {"split_fraction", split_fraction},
         {"seed", seed},
         {"variance_grid", variance_grid},
         {"max_iter", max_iter}};
  j["sigma_u2"] = sigma_u2 ? json(*sigma_u2) : json(nullptr);
  j["sigma_v2"] = sigma_v2 ? json(*sigma_v2) : json(nullptr);
  return j;
}

FitConfig FitConfig::from_json(const json& j) {
  FitConfig c;
  c.method = method_from_string(j.at("method").get<std::string>());
  c.b = j.value("b", c.b);
  c.num_bins = j.value("B", c.num_bins);
  c.delta = j.value("delta", c.delta);
  c.split_fraction = j.value("split_fraction", c.split_fraction);
  c.seed = j.value("seed", c.seed);
  c.max_iter = j.value("max_iter", c.max_iter);
  if (j.contains("variance_grid")) c.variance_grid = j.at("variance_grid").get<std::vector<double>>();
  if (j.contains("sigma_u2") && !j["sigma_u2"].is_null()) c.sigma_u2 = j["sigma_u2"].get<double>();
  if (j.contains("sigma_v2") && !j["sigma_v2"].is_null()) c.sigma_v2 = j["sigma_v2"].get<double>();
  return c;
}

FittedCalibrator fit_calibrator(const Dataset& train, const FitConfig& cfg,
                                std::shared_ptr<const Partitioner> part, const Dataset* tune) {
  if (train.empty()) throw ValidationError("empty dataset");
  if (uses_partitioner(cfg.method) && !part)
    throw ValidationError("method " + to_string(cfg.method) + " requires --partitioner");
  if (part && part->dim() != train.embedding_dim)
    throw ValidationError("partitioner dimension does not match the dataset");

  FittedCalibrator fc;
  fc.config_ = cfg;
  ScalerOptions sopts;
  sopts.max_iter = cfg.max_iter;

  switch (cfg.method) {
    case Method::kNone:
      break;
    case Method::kUmd: {
      std::vector<ScoredTarget> st;
      st.reserve(train.size());
      for (const auto& r : train.records) st.push_back({r.confidence, r.label});
      fc.umd_ = UmdCalibrator::fit(st, cfg.num_bins, cfg.delta);
      break;
    }
    case Method::kPlatt: {
      sopts.mode = ScalerMode::kPlatt;
      const auto samples = scaler_samples(train, iota_indices(train.size()), nullptr);
      fc.scaler_ = fit_scaler(samples, sopts).model;
      break;
    }
    case Method::kScaleBin: {
      const auto [first, second] = halve_indices(train.size(), cfg.split_fraction, cfg.seed);
      sopts.mode = ScalerMode::kPlatt;
      const auto model = fit_scaler(scaler_samples(train, first, nullptr), sopts).model;
      std::vector<ScoredTarget> st;
      std::vector<ScalerSample> holdout;
      for (auto i : second) {
        const auto& r = train.records[i];
        st.push_back({r.confidence, model.apply(r.confidence)});
        holdout.push_back({kOutOfBounds, r.confidence, r.label});
      }
      fc.umd_ = UmdCalibrator::fit(st, cfg.num_bins, cfg.delta);
      fc.nu_hat_ = estimate_misspecification(model, holdout);
      fc.scaler_ = model;
      break;
    }
    case Method::kQab:
      fc.table_ = fit_qa_binning(train, *part, cfg.b, cfg.delta);
      break;
    case Method::kSQab:
    case Method::kHsQab: {
      ScalingQabConfig sc;
      sc.split_fraction = cfg.split_fraction;
      sc.b = cfg.b;
      sc.delta = cfg.delta;
      sc.seed = cfg.seed;
      sc.max_iter = cfg.max_iter;
      sc.scaler_mode = cfg.method == Method::kSQab ? ScalerMode::kPooled : ScalerMode::kHierarchical;
      if (cfg.method == Method::kHsQab) {
        if (cfg.sigma_u2 && cfg.sigma_v2) {
          sc.sigma_u2 = *cfg.sigma_u2;
          sc.sigma_v2 = *cfg.sigma_v2;
        } else if (tune != nullptr && !tune->empty()) {
          // Same halving as the fit below, so the search trains on exactly
          // the scaler's share.
          const auto first = halve_indices(train.size(), cfg.split_fraction, cfg.seed).first;
          const auto tr = scaler_samples(train, first, part.get());
          const auto ho = scaler_samples(*tune, iota_indices(tune->size()), part.get());
          const auto pv = select_prior_variance(tr, ho, cfg.variance_grid, sopts);
          sc.sigma_u2 = cfg.sigma_u2.value_or(pv.sigma_u2);
          sc.sigma_v2 = cfg.sigma_v2.value_or(pv.sigma_v2);
        } else {
          sc.sigma_u2 = cfg.sigma_u2.value_or(1.0);
          sc.sigma_v2 = cfg.sigma_v2.value_or(1.0);
        }
        fc.config_.sigma_u2 = sc.sigma_u2;
        fc.config_.sigma_v2 = sc.sigma_v2;
      }
      auto fit = fit_scaling_qa_binning(train, *part, sc);
      fc.table_ = std::move(fit.table);
      fc.scaler_ = std::move(fit.scaler);
      fc.nu_hat_ = fit.nu_hat;
      break;
    }
  }
  if (uses_partitioner(cfg.method)) fc.partitioner_ = std::move(part);
  return fc;
}

double FittedCalibrator::predict(EmbeddingView embedding, double h) const {
  switch (config_.method) {
    case Method::kNone:
      return h;
    case Method::kUmd:
    case Method::kScaleBin:
      return umd_->apply(h);
    case Method::kPlatt:
      return scaler_->apply(h);
    case Method::kQab:
    case Method::kSQab:
    case Method::kHsQab:
      return predict_qa_binning(*table_, *partitioner_, embedding, h);
  }
  return h;
}

std::vector<double> FittedCalibrator::predict_all(const Dataset& d) const {
  std::vector<double> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(predict(r.embedding, r.confidence));
  return out;
}

void FittedCalibrator::save(const std::filesystem::path& manifest) const {
  const auto dir = manifest.parent_path();
  const auto stem = manifest.stem().string();
  json m{{"format", "qacal.bundle.v1"}, {"config", config_.to_json()}, {"nu_hat", nu_hat_}};
  auto put = [&](const char* key, const json& body) {
    const std::string name = stem + "." + key + ".json";
    write_json(dir / name, body);
    m[key] = name;
  };
  if (umd_) put("umd", umd_->to_json());
  if (scaler_) put("scaler", scaler_->to_json());
  if (table_) put("table", table_->to_json());
  if (partitioner_) put("partitioner", partitioner_->to_json());
  write_json(manifest, m);
}

FittedCalibrator FittedCalibrator::load(const std::filesystem::path& manifest) {
  const json m = read_json(manifest);
  if (m.value("format", "") != "qacal.bundle.v1")
    throw ValidationError(manifest.string() + ": not a calibrator bundle");
  const auto dir = manifest.parent_path();
  FittedCalibrator fc;
  fc.config_ = FitConfig::from_json(m.at("config"));
  fc.nu_hat_ = m.value("nu_hat", 0.0);
  auto part = [&](const char* key) { return read_json(dir / m.at(key).get<std::string>()); };
  if (m.contains("umd")) fc.umd_ = UmdCalibrator::from_json(part("umd"));
  if (m.contains("scaler")) fc.scaler_ = HierScalerModel::from_json(part("scaler"));
  if (m.contains("table")) fc.table_ = CalibratorTable::from_json(part("table"));
  if (m.contains("partitioner")) fc.partitioner_ = partitioner_from_json(part("partitioner"));

  const Method meth = fc.config_.method;
  const bool ok = meth == Method::kNone ||
                  ((meth == Method::kUmd || meth == Method::kScaleBin) && fc.umd_) ||
                  (meth == Method::kPlatt && fc.scaler_) ||
                  (uses_partitioner(meth) && fc.table_ && fc.partitioner_);
  if (!ok) throw ValidationError(manifest.string() + ": bundle is missing a component");
  if (fc.table_ && fc.table_->partitioner_ref() != fc.partitioner_->id())
    throw ValidationError(manifest.string() + ": table was fit with a different partitioner");
  return fc;
}

}  // namespace qacal
