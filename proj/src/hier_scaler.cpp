#include "qacal/hier_scaler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "qacal/error.hpp"

namespace qacal {

using nlohmann::json;

std::string to_string(ScalerMode mode) {
  switch (mode) {
    case ScalerMode::kHierarchical: return "hierarchical";
    case ScalerMode::kPooled: return "pooled";
    case ScalerMode::kPlatt: return "platt";
  }
  return "pooled";
}

ScalerMode scaler_mode_from_string(const std::string& s) {
  if (s == "hierarchical") return ScalerMode::kHierarchical;
  if (s == "pooled") return ScalerMode::kPooled;
  if (s == "platt") return ScalerMode::kPlatt;
  throw ValidationError("unknown scaler mode \"" + s + "\"");
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// t log p + (1 - t) log(1 - p) with p = logistic(eta).
double bernoulli_ll(double eta, double t) { return t * eta - softplus(eta); }

json variance_to_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }
double variance_from_json(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

double HierScalerModel::apply(double h, PartitionId s) const {
  double u = 0.0, v = 0.0;
  if (mode == ScalerMode::kHierarchical && s != kOutOfBounds) {
    if (auto it = effects.find(s); it != effects.end()) std::tie(u, v) = it->second;
  }
  return logistic(b0 + u + (b1 + v) * h);
}

json HierScalerModel::to_json() const {
  json eff = json::object();
  for (const auto& [s, uv] : effects) eff[std::to_string(s)] = {uv.first, uv.second};
  return {{"format", "scaler.v1"},
          {"mode", to_string(mode)},
          {"b0", b0},
          {"b1", b1},
          {"sigma_u2", variance_to_json(sigma_u2)},
          {"sigma_v2", variance_to_json(sigma_v2)},
          {"effects", eff}};
}

HierScalerModel HierScalerModel::from_json(const json& j) {
  if (j.at("format") != "scaler.v1") throw ValidationError("not a scaler.v1 model");
  HierScalerModel m;
  m.mode = scaler_mode_from_string(j.at("mode").get<std::string>());
  m.b0 = j.at("b0").get<double>();
  m.b1 = j.at("b1").get<double>();
  m.sigma_u2 = variance_from_json(j.at("sigma_u2"));
  m.sigma_v2 = variance_from_json(j.at("sigma_v2"));
  for (const auto& [key, uv] : j.at("effects").items())
    m.effects[std::stoi(key)] = {uv.at(0).get<double>(), uv.at(1).get<double>()};
  return m;
}

ScalerObjective::ScalerObjective(std::span<const ScalerSample> data, const ScalerOptions& options)
    : data_(data.begin(), data.end()), options_(options) {
  if (data_.size() < 2) throw ValidationError("scaler needs at least 2 records");
  for (const auto& x : data_) {
    if (!std::isfinite(x.confidence) || !std::isfinite(x.target) || x.target < 0.0 || x.target > 1.0)
      throw ValidationError("scaler targets must lie in [0, 1]");
  }
  if (!(options.sigma_u2 > 0.0) || !(options.sigma_v2 > 0.0))
    throw ValidationError("prior variances must be positive");
  precision_u_ = 1.0 / options.sigma_u2;
  precision_v_ = 1.0 / options.sigma_v2;

  group_index_.assign(data_.size(), -1);
  if (options.mode == ScalerMode::kHierarchical) {
    for (const auto& x : data_)
      if (x.partition != kOutOfBounds) groups_.push_back(x.partition);
    std::sort(groups_.begin(), groups_.end());
    groups_.erase(std::unique(groups_.begin(), groups_.end()), groups_.end());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (data_[i].partition == kOutOfBounds) continue;
      group_index_[i] = static_cast<int>(
          std::lower_bound(groups_.begin(), groups_.end(), data_[i].partition) - groups_.begin());
    }
  }
}

double ScalerObjective::value(const Eigen::VectorXd& theta) const {
  const std::size_t S = groups_.size();
  double f = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    double a = theta[0], c = theta[1];
    if (const int g = group_index_[i]; g >= 0) {
      a += theta[2 + g];
      c += theta[2 + S + static_cast<std::size_t>(g)];
    }
    f += bernoulli_ll(a + c * data_[i].confidence, data_[i].target);
  }
  f -= 0.5 * options_.fixed_ridge * (theta[0] * theta[0] + theta[1] * theta[1]);
  for (std::size_t g = 0; g < S; ++g) {
    f -= 0.5 * precision_u_ * theta[2 + g] * theta[2 + g];
    f -= 0.5 * precision_v_ * theta[2 + S + g] * theta[2 + S + g];
  }
  return f;
}

Eigen::VectorXd ScalerObjective::gradient(const Eigen::VectorXd& theta) const {
  const std::size_t S = groups_.size();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_params()));
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const int g = group_index_[i];
    double a = theta[0], c = theta[1];
    if (g >= 0) {
      a += theta[2 + g];
      c += theta[2 + S + static_cast<std::size_t>(g)];
    }
    const double h = data_[i].confidence;
    const double r = data_[i].target - logistic(a + c * h);
    grad[0] += r;
    grad[1] += r * h;
    if (g >= 0) {
      grad[2 + g] += r;
      grad[static_cast<Eigen::Index>(2 + S) + g] += r * h;
    }
  }
  grad[0] -= options_.fixed_ridge * theta[0];
  grad[1] -= options_.fixed_ridge * theta[1];
  for (std::size_t g = 0; g < S; ++g) {
    grad[static_cast<Eigen::Index>(2 + g)] -= precision_u_ * theta[2 + g];
    grad[static_cast<Eigen::Index>(2 + S + g)] -= precision_v_ * theta[2 + S + g];
  }
  return grad;
}

Eigen::MatrixXd ScalerObjective::hessian(const Eigen::VectorXd& theta) const {
  const std::size_t S = groups_.size();
  const auto P = static_cast<Eigen::Index>(num_params());
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(P, P);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const int g = group_index_[i];
    double a = theta[0], c = theta[1];
    if (g >= 0) {
      a += theta[2 + g];
      c += theta[2 + S + static_cast<std::size_t>(g)];
    }
    const double h = data_[i].confidence;
    const double p = logistic(a + c * h);
    const double w = p * (1.0 - p);
    // Non-zero features: (1, h) on the fixed effects, (1, h) on the group's effects.
    Eigen::Index idx[4] = {0, 1, 0, 0};
    double x[4] = {1.0, h, 1.0, h};
    int nnz = 2;
    if (g >= 0) {
      idx[2] = 2 + g;
      idx[3] = static_cast<Eigen::Index>(2 + S) + g;
      nnz = 4;
    }
    for (int r = 0; r < nnz; ++r)
      for (int q = 0; q < nnz; ++q) hess(idx[r], idx[q]) -= w * x[r] * x[q];
  }
  hess(0, 0) -= options_.fixed_ridge;
  hess(1, 1) -= options_.fixed_ridge;
  for (std::size_t g = 0; g < S; ++g) {
    hess(static_cast<Eigen::Index>(2 + g), static_cast<Eigen::Index>(2 + g)) -= precision_u_;
    hess(static_cast<Eigen::Index>(2 + S + g), static_cast<Eigen::Index>(2 + S + g)) -= precision_v_;
  }
  return hess;
}

HierScalerModel ScalerObjective::unpack(const Eigen::VectorXd& theta) const {
  HierScalerModel m;
  m.mode = options_.mode;
  m.b0 = theta[0];
  m.b1 = theta[1];
  m.sigma_u2 = options_.sigma_u2;
  m.sigma_v2 = options_.sigma_v2;
  const std::size_t S = groups_.size();
  for (std::size_t g = 0; g < S; ++g)
    m.effects[groups_[g]] = {theta[static_cast<Eigen::Index>(2 + g)],
                             theta[static_cast<Eigen::Index>(2 + S + g)]};
  return m;
}

ScalerFit fit_scaler(std::span<const ScalerSample> data, const ScalerOptions& options) {
  if (options.max_iter < 1) throw ValidationError("max_iter must be positive");
  ScalerObjective objective(data, options);
  const auto P = static_cast<Eigen::Index>(objective.num_params());

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
  double f = objective.value(theta);
  Eigen::VectorXd grad = objective.gradient(theta);

  ScalerFit fit;
  fit.objective_trace.push_back(f);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() <= options.tol) {
      fit.converged = true;
      break;
    }
    fit.iterations = iter + 1;
    // The objective is concave, so -H is positive definite up to round-off;
    // Levenberg damping covers the ill-conditioned case.
    const Eigen::MatrixXd neg_hess = -objective.hessian(theta);
    Eigen::VectorXd step;
    for (double lambda = 0.0;; lambda = lambda == 0.0 ? 1e-10 : lambda * 10.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(neg_hess + lambda * Eigen::MatrixXd::Identity(P, P));
      if (llt.info() == Eigen::Success) {
        step = llt.solve(grad);
        if (step.allFinite()) break;
      }
      if (lambda > 1e12) break;
    }
    if (step.size() != P || !step.allFinite()) break;
    // Half the Newton decrement predicts the remaining ascent. Once it is at
    // round-off level the objective cannot tell iterates apart any more.
    if (0.5 * grad.dot(step) <= 1e-12 * (1.0 + std::abs(f))) {
      fit.converged = true;
      break;
    }

    // Step halving until the objective does not decrease.
    bool accepted = false;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      const Eigen::VectorXd candidate = theta + t * step;
      const double f_new = objective.value(candidate);
      if (std::isfinite(f_new) && f_new >= f) {
        theta = candidate;
        f = f_new;
        grad = objective.gradient(theta);
        fit.objective_trace.push_back(f_new);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!fit.converged && grad.lpNorm<Eigen::Infinity>() <= options.tol) fit.converged = true;

  fit.model = objective.unpack(theta);
  fit.objective = f;
  fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  return fit;
}

double log_likelihood(const HierScalerModel& model, std::span<const ScalerSample> data) {
  double ll = 0.0;
  for (const auto& x : data) {
    double u = 0.0, v = 0.0;
    if (model.mode == ScalerMode::kHierarchical && x.partition != kOutOfBounds) {
      if (auto it = model.effects.find(x.partition); it != model.effects.end()) std::tie(u, v) = it->second;
    }
    ll += bernoulli_ll(model.b0 + u + (model.b1 + v) * x.confidence, x.target);
  }
  return ll;
}

PriorVariance select_prior_variance(std::span<const ScalerSample> train,
                                    std::span<const ScalerSample> holdout,
                                    const std::vector<double>& grid, ScalerOptions options) {
  if (grid.empty()) throw ValidationError("empty prior variance grid");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  options.mode = ScalerMode::kHierarchical;

  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  struct Scored {
    std::size_t iu, iv;
    double ll;
  };
  std::vector<Scored> scored;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t iu = 0; iu < sorted.size(); ++iu) {
    for (std::size_t iv = 0; iv < sorted.size(); ++iv) {
      options.sigma_u2 = sorted[iu];
      options.sigma_v2 = sorted[iv];
      const double ll = log_likelihood(fit_scaler(train, options).model, holdout);
      scored.push_back({iu, iv, ll});
      best_ll = std::max(best_ll, ll);
    }
  }
  // Among pairs within the tolerance of the best, take the most pooled one:
  // fewest grid steps up in total, then the smaller intercept variance.
  const Scored* pick = nullptr;
  for (const auto& c : scored) {
    if (!(c.ll >= best_ll - kVarianceTieTolerance)) continue;
    if (!pick || c.iu + c.iv < pick->iu + pick->iv ||
        (c.iu + c.iv == pick->iu + pick->iv && c.iu < pick->iu))
      pick = &c;
  }
  if (!pick) pick = &scored.front();  // every fit produced a non-finite likelihood
  return {sorted[pick->iu], sorted[pick->iv]};
}

void save_scaler(const std::filesystem::path& path, const HierScalerModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model.to_json().dump(1) << '\n';
}

HierScalerModel load_scaler(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scaler file " + path.string());
  try {
    return HierScalerModel::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("malformed scaler file " + path.string() + ": " + e.what());
  }
}

}  // namespace qacal
