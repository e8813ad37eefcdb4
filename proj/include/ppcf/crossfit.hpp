#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ppcf/error.hpp"
#include "ppcf/kernel.hpp"
#include "ppcf/model.hpp"
#include "ppcf/nuisance.hpp"
#include "ppcf/process.hpp"

namespace ppcf {

struct CrossFitConfig {
  int folds = 2;
  std::uint64_t seed = 0;
  int kernel_order = 2;
  std::optional<double> bandwidth;  //!< overrides the rate rule when set
  double c0 = 1.0;                  //!< constant in the rate rule
  int smoothness = 2;               //!< m in the rate rule
  int grid_n = 64;
  Approximation approximation = Approximation::quadrature;
  bool skip_thinning = false;
  OptimizerOptions optimizer{};
  std::size_t eta_grid = 256;  //!< z-grid size for tabulated curves; 0 for exact
  std::size_t eta_bins = 2048; //!< linear-binning resolution behind the table; 0 for dense
  double rho = 0.0;            //!< dummy intensity per fold; 0 for 4 n / |A|
  bool use_pattern_folds = false;  //!< take fold labels from the pattern as given
  //! Scale on the nuisance objective of a fold complement. The complement has
  //! intensity lambda (V-1)/V, so (V-1)/V makes eta_hat target the full-data
  //! nuisance; the inverse factor V/(V-1) shifts eta_hat by 2 log((V-1)/V).
  bool inverse_complement_scale = false;

  void validate(const ModelSpec& spec) const {
    if (!skip_thinning && folds < 2) throw error(errc::invalid_folds, "V must be >= 2");
    if (skip_thinning && spec.link() != Link::log_linear) {
      throw error(errc::invalid_argument, "skip_thinning is only valid for the log-linear link");
    }
    if (grid_n < 4) throw error(errc::invalid_argument, "grid_n must be >= 4");
    if (bandwidth && !(*bandwidth > 0.0)) throw error(errc::invalid_argument, "bandwidth must be positive");
    if (rho < 0.0) throw error(errc::invalid_argument, "rho must be >= 0");
    if (eta_grid == 1) throw error(errc::invalid_argument, "eta_grid must be 0 or >= 2");
    if (eta_bins == 1) throw error(errc::invalid_argument, "eta_bins must be 0 or >= 2");
  }

  KernelSpec kernel_for(const ModelSpec& spec) const {
    const double h = bandwidth ? *bandwidth
                               : default_bandwidth(spec.window().area(), spec.q(), spec.k(), kernel_order,
                                                   smoothness, c0);
    return KernelSpec::of_order(kernel_order, h);
  }
};

struct FoldResult {
  int fold = 0;
  bool converged = false;
  Vec theta;
  OptimizerResult optimizer;
  std::size_t train_points = 0;
  std::size_t eval_points = 0;
  std::string failure;
};

//! Output of cross-fitting: the averaged target estimate and the averaged
//! nuisance curve evaluated at it.
class CrossFitResult {
public:
  Vec theta_hat;
  std::vector<FoldResult> folds;
  KernelSpec kernel;

  //! eta_hat(z) = mean over converged folds of eta^(v)_{theta_hat}(z).
  double eta_hat(const Vec& z) const {
    double s = 0.0;
    for (std::size_t i = 0; i < fits_.size(); ++i) {
      if (tables_[i] && z.size() == 1 && z[0] >= tables_[i]->z[0] &&
          z[0] <= tables_[i]->z[tables_[i]->z.size() - 1]) {
        s += interpolate(*tables_[i], z[0]);
      } else {
        s += fits_[i]->fit_eta(theta_hat, z);
      }
    }
    return s / static_cast<double>(fits_.size());
  }

  Vec eta_hat_rows(const Mat& z) const {
    Vec out(z.rows());
    for (Eigen::Index j = 0; j < z.rows(); ++j) out[j] = eta_hat(z.row(j).transpose());
    return out;
  }

  std::size_t clip_count() const {
    std::size_t n = 0;
    for (const auto& f : fits_) n += f->clip_count();
    return n;
  }

  std::size_t converged_folds() const { return fits_.size(); }
  const std::vector<std::shared_ptr<const NuisanceFit>>& fold_fits() const { return fits_; }

  void add_fold_curve(std::shared_ptr<const NuisanceFit> fit, std::optional<GridTable> table) {
    fits_.push_back(std::move(fit));
    tables_.push_back(table ? std::make_shared<const GridTable>(std::move(*table)) : nullptr);
  }

private:
  std::vector<std::shared_ptr<const NuisanceFit>> fits_;
  std::vector<std::shared_ptr<const GridTable>> tables_;
};

namespace detail {

struct FoldWork {
  std::shared_ptr<const NuisanceFit> fit;
  std::shared_ptr<const NuisanceTable> table;
};

inline std::pair<double, double> nuisance_range(const ModelSpec& spec) {
  const GridField& z = spec.nuisance_fields().front();
  return {z.min(), z.max()};
}

} // namespace detail

//! V-fold spatial cross-fitting: thin, fit the nuisance curve on each fold
//! complement, profile-maximize on each fold, average.
inline CrossFitResult cross_fit(const ModelSpec& spec, const PointPattern& pattern, const CrossFitConfig& cfg) {
  cfg.validate(spec);
  if (pattern.empty()) throw error(errc::insufficient_points, "cannot fit an empty pattern");
  if (!(pattern.window() == spec.window())) {
    throw error(errc::window_mismatch, "pattern and covariate fields use different windows");
  }
  const KernelSpec kernel = cfg.kernel_for(spec);
  const int V = cfg.skip_thinning ? 1 : cfg.folds;

  PointPattern labelled;
  if (!cfg.skip_thinning) {
    if (cfg.use_pattern_folds) {
      if (!pattern.marked()) throw error(errc::unmarked_pattern, "use_pattern_folds needs fold labels");
      if (pattern.fold_count() != V) throw error(errc::invalid_folds, "pattern labels disagree with V");
      labelled = pattern;
    } else {
      labelled = v_fold_thin(pattern, V, cfg.seed);
    }
  }

  const bool tabulate = cfg.eta_grid > 0 && spec.q() == 1;
  const auto [z_lo, z_hi] = detail::nuisance_range(spec);

  CrossFitResult out;
  out.kernel = kernel;
  std::vector<detail::FoldWork> work;
  Vec sum = Vec::Zero(spec.k());
  std::string failures;
  for (int v = 1; v <= V; ++v) {
    FoldResult fr;
    fr.fold = v;
    detail::FoldWork w;
    try {
      const PointPattern train = cfg.skip_thinning ? pattern : fold_complement(labelled, v);
      const PointPattern eval = cfg.skip_thinning ? pattern : fold(labelled, v);
      fr.train_points = train.count();
      fr.eval_points = eval.count();
      const double ratio = static_cast<double>(V - 1) / V;
      const double train_scale = cfg.skip_thinning ? 1.0 : (cfg.inverse_complement_scale ? 1.0 / ratio : ratio);
      const double eval_scale = 1.0 / V;

      w.fit = std::make_shared<const NuisanceFit>(spec, build_quadrature(train, cfg.grid_n), kernel, train_scale);
      const Objective obj = [&] {
        if (cfg.approximation == Approximation::quadrature) {
          return Objective::quadrature(spec, build_quadrature(eval, cfg.grid_n), eval_scale);
        }
        const double rho = cfg.rho > 0.0 ? cfg.rho : default_rho(eval.count(), eval.window());
        const PointPattern dummy = draw_dummy(eval.window(), rho, derive_seed(cfg.seed, stream::dummy, v));
        return Objective::logistic(spec, build_logistic(eval, dummy, rho), eval_scale);
      }();

      std::unique_ptr<ProfileCurve> curve;
      if (tabulate) {
        w.table = std::make_shared<const NuisanceTable>(w.fit, z_lo, z_hi, cfg.eta_grid, cfg.eta_bins);
        curve = std::make_unique<TabulatedCurve>(w.table, obj.covariates().z);
      } else {
        curve = std::make_unique<ExactCurve>(w.fit, obj.covariates().z);
      }
      fr.optimizer = profile_maximize(spec, obj, *curve, Vec::Zero(spec.k()), cfg.optimizer);
      fr.theta = fr.optimizer.theta;
      fr.converged = true;
      sum += fr.theta;
    } catch (const error& e) {
      fr.failure = std::string(to_string(e.code())) + ": " + e.what();
      failures += " fold " + std::to_string(v) + " (" + fr.failure + ")";
      w = {};
    }
    out.folds.push_back(fr);
    work.push_back(std::move(w));
  }

  int ok = 0;
  for (const auto& f : out.folds) ok += f.converged ? 1 : 0;
  if (ok == 0 || 2 * ok < V) {
    throw error(errc::all_folds_failed, std::to_string(V - ok) + " of " + std::to_string(V) +
                                          " folds failed:" + failures);
  }
  out.theta_hat = sum / ok;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (!out.folds[i].converged) continue;
    std::optional<GridTable> t;
    if (work[i].table) t = work[i].table->table(out.theta_hat);
    out.add_fold_curve(work[i].fit, std::move(t));
    work[i].table.reset();
  }
  return out;
}

} // namespace ppcf
