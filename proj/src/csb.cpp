#include "rsate/csb.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "rsate/matrix_util.hpp"
#include "rsate/parallel.hpp"
#include "rsate/rng.hpp"

namespace rsate {

namespace {

constexpr int kResampleRetries = 10;

// Auxiliary arm rows paired with their conformal p-values; the entry list of
// a PValueTable must cover exactly these rows.
struct ArmPValues {
  std::vector<int> rows;
  std::vector<double> p;
};

ArmPValues arm_pvalues(const StudyDataset& d, const PValueTable& pv, int arm) {
  ArmPValues out;
  for (int i : d.aux_rows) {
    if (d.treatment[i] == arm) out.rows.push_back(i);
  }
  const auto& entries = pv.entries[static_cast<std::size_t>(arm)];
  if (entries.size() != out.rows.size()) {
    throw std::invalid_argument(
        "csb: p-value table does not match dataset auxiliary arm rows");
  }
  out.p.reserve(out.rows.size());
  for (std::size_t k = 0; k < out.rows.size(); ++k) {
    if (entries[k].first != out.rows[k]) {
      throw std::invalid_argument(
          "csb: p-value table does not match dataset auxiliary arm rows");
    }
    out.p.push_back(entries[k].second);
  }
  return out;
}

// Shared per-sample state: the full-sample sampling model is only needed
// when an arm selects its entire auxiliary pool, so it is fit lazily.
struct SampleContext {
  const StudyDataset& d;
  const DesignPropensity& design;
  double clip_eps;
  std::optional<SamplingFit> sampling;

  const SamplingFit& get_sampling() {
    if (!sampling.has_value()) sampling = fit_sampling_model(d, clip_eps);
    return *sampling;
  }
};

struct CsbArm {
  ArmParts parts;
  std::vector<int> selected;
  bool collapsed_nb = false;
  bool collapsed_fb = false;
};

// One arm of the selective-borrowing estimator at threshold gamma.
class CsbArmEvaluator {
 public:
  CsbArmEvaluator(SampleContext& ctx, int arm, ArmPValues pvalues,
                  const CsbOptions& opts)
      : ctx_(ctx), arm_(arm), aux_(std::move(pvalues)), opts_(opts) {
    for (int i : ctx_.d.target_rows) {
      if (ctx_.d.treatment[i] == arm_) target_arm_rows_.push_back(i);
    }
  }

  std::vector<int> select(double gamma) const {
    std::vector<int> sel;
    if (gamma >= 1.0) return sel;  // no-borrowing threshold
    for (std::size_t k = 0; k < aux_.rows.size(); ++k) {
      if (aux_.p[k] >= gamma) sel.push_back(aux_.rows[k]);
    }
    return sel;
  }

  CsbArm eval(double gamma) {
    CsbArm out;
    out.selected = select(gamma);
    if (out.selected.empty()) {
      out.collapsed_nb = true;
      out.parts = nb_arm_parts(ctx_.d, ctx_.design, arm_, opts_.use_ivw);
      out.parts.flags.push_back("arm " + std::to_string(arm_) +
                                ": empty selection, no-borrowing estimate");
      return out;
    }
    if (out.selected.size() == aux_.rows.size()) {
      out.collapsed_fb = true;
      const SamplingFit& sampling = ctx_.get_sampling();
      out.parts = opts_.use_ivw
                      ? fb_ivw_arm_parts(ctx_.d, ctx_.design, arm_,
                                         sampling.pi_hat)
                            .parts
                      : fb_xonly_arm_parts(ctx_.d, ctx_.design, arm_,
                                           sampling.pi_hat);
      out.parts.flags.push_back("arm " + std::to_string(arm_) +
                                ": full selection, full-borrowing estimate");
      return out;
    }
    eval_interior(gamma, out);
    return out;
  }

  double theta(double gamma) { return eval(gamma).parts.theta_hat; }

  std::size_t aux_count() const { return aux_.rows.size(); }
  std::size_t selected_count(double gamma) const {
    if (gamma >= 1.0) return 0;
    std::size_t c = 0;
    for (double p : aux_.p) c += p >= gamma;
    return c;
  }

 private:
  void eval_interior(double gamma, CsbArm& out) {
    const StudyDataset& d = ctx_.d;
    ArmParts& parts = out.parts;
    parts.arm = arm_;

    // Working sample: every target row plus the selected auxiliary rows.
    std::vector<int> working = d.target_rows;
    working.insert(working.end(), out.selected.begin(), out.selected.end());
    const Eigen::Index nw = static_cast<Eigen::Index>(working.size());

    const Eigen::MatrixXd xw = gather_rows(d.x, working);
    Eigen::VectorXd region_label(nw), keep_label(nw);
    for (Eigen::Index k = 0; k < nw; ++k) {
      const int i = working[static_cast<std::size_t>(k)];
      const bool target = d.is_target(i);
      region_label[k] = target ? 1.0 : 0.0;
      keep_label[k] = (!target || d.treatment[i] == arm_) ? 1.0 : 0.0;
    }

    // pi_csb: target-vs-selected sampling model on the working sample.
    LogisticModelFit pi_fit =
        fit_logistic(xw, region_label, kLogisticMaxIter, kLogisticTol,
                     warm_pi_.size() > 0 ? &warm_pi_ : nullptr);
    pi_fit.clip_eps = opts_.clip_eps;
    warm_pi_ = pi_fit.coefficients;
    if (!pi_fit.converged) {
      parts.flags.push_back("arm " + std::to_string(arm_) +
                            ": pi_csb did not converge");
    }
    const Eigen::VectorXd pi_hat = predict(pi_fit, xw);

    // Pooled outcome model on the working arm rows.
    std::vector<int> working_arm = target_arm_rows_;
    working_arm.insert(working_arm.end(), out.selected.begin(),
                       out.selected.end());
    const LinearModelFit mu_csb =
        fit_linear(gather_rows(d.x, working_arm),
                   gather(d.outcome, working_arm));

    // Predictions: IVW blend on target rows, pooled fit on selected rows.
    Eigen::VectorXd y_hat(nw);
    if (opts_.use_ivw) {
      const LinearModelFit mu_nb =
          fit_linear(gather_xu(d, target_arm_rows_),
                     gather(d.outcome, target_arm_rows_));
      double v_nb = 0.0;
      for (int i : target_arm_rows_) {
        Eigen::RowVectorXd xu(d.x.cols() + d.u.cols());
        xu.head(d.x.cols()) = d.x.row(i);
        xu.tail(d.u.cols()) = d.u.row(i);
        const double r = d.outcome[i] - mu_nb.predict_one(xu);
        v_nb += r * r;
      }
      v_nb /= static_cast<double>(target_arm_rows_.size());
      double v_csb = 0.0;
      for (int i : working_arm) {
        const double r = d.outcome[i] - mu_csb.predict_one(d.x.row(i));
        v_csb += r * r;
      }
      v_csb /= static_cast<double>(working_arm.size());
      const double w_nb =
          v_nb + v_csb > 0.0 ? v_csb / (v_nb + v_csb) : 0.5;
      for (Eigen::Index k = 0; k < nw; ++k) {
        const int i = working[static_cast<std::size_t>(k)];
        const double fb = mu_csb.predict_one(d.x.row(i));
        if (d.is_target(i)) {
          Eigen::RowVectorXd xu(d.x.cols() + d.u.cols());
          xu.head(d.x.cols()) = d.x.row(i);
          xu.tail(d.u.cols()) = d.u.row(i);
          y_hat[k] = w_nb * mu_nb.predict_one(xu) + (1.0 - w_nb) * fb;
        } else {
          y_hat[k] = fb;
        }
      }
    } else {
      for (Eigen::Index k = 0; k < nw; ++k) {
        y_hat[k] =
            mu_csb.predict_one(d.x.row(working[static_cast<std::size_t>(k)]));
      }
    }

    // e_csb: P(A=a, p >= gamma | X) on the working sample. Non-convergence
    // falls back to the analytic pi_csb * e_a.
    Eigen::VectorXd e_hat(nw);
    bool fallback = false;
    try {
      LogisticModelFit e_fit =
          fit_logistic(xw, keep_label, kLogisticMaxIter, kLogisticTol,
                       warm_e_.size() > 0 ? &warm_e_ : nullptr);
      e_fit.clip_eps = opts_.clip_eps;
      warm_e_ = e_fit.coefficients;
      if (e_fit.converged) {
        e_hat = predict(e_fit, xw);
      } else {
        fallback = true;
      }
    } catch (const std::invalid_argument&) {
      fallback = true;
    }
    if (fallback) {
      parts.flags.push_back("arm " + std::to_string(arm_) +
                            ": e_csb degenerate, using pi_csb * e_a");
      for (Eigen::Index k = 0; k < nw; ++k) {
        const int i = working[static_cast<std::size_t>(k)];
        e_hat[k] = std::clamp(
            pi_hat[k] * ctx_.design.e(d, i, arm_), opts_.clip_eps,
            1.0 - opts_.clip_eps);
      }
    }

    parts.nu = Eigen::VectorXd::Zero(d.n());
    double total = 0.0;
    (void)gamma;
    for (Eigen::Index k = 0; k < nw; ++k) {
      const int i = working[static_cast<std::size_t>(k)];
      double v = 0.0;
      if (d.is_target(i)) {
        v += y_hat[k];
        if (d.treatment[i] == arm_) {
          v += pi_hat[k] * (d.outcome[i] - y_hat[k]) / e_hat[k];
        }
      } else {
        v += pi_hat[k] * (d.outcome[i] - y_hat[k]) / e_hat[k];
      }
      parts.nu[i] = v;
      total += v;
    }
    parts.theta_hat = total / static_cast<double>(d.n_target);
  }

  SampleContext& ctx_;
  int arm_;
  ArmPValues aux_;
  const CsbOptions& opts_;
  std::vector<int> target_arm_rows_;
  Eigen::VectorXd warm_pi_, warm_e_;
};

}  // namespace

std::vector<double> CsbOptions::resolved_grid() const {
  if (!grid.empty()) return grid;
  std::vector<double> g;
  for (int k = 0; k <= 10; ++k) g.push_back(0.1 * k);
  g.back() = 1.0;
  return g;
}

SelectedSet select_set(const PValueTable& pvalues, int arm, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) {
    throw std::invalid_argument("select_set: gamma must lie in [0,1]");
  }
  SelectedSet out;
  out.arm = arm;
  out.gamma = gamma;
  for (const auto& [idx, p] : pvalues.entries[static_cast<std::size_t>(arm)]) {
    if (p >= gamma) out.indices.push_back(idx);
  }
  return out;
}

StudyDataset bootstrap_resample(const StudyDataset& dataset,
                                std::uint64_t seed) {
  // Strata keyed by (region label, arm); each row resamples from its own
  // stratum, preserving region and arm counts exactly.
  std::map<std::pair<int, int>, std::vector<int>> strata;
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    strata[{dataset.region[i], dataset.treatment[i]}].push_back(
        static_cast<int>(i));
  }
  Rng rng(seed);
  std::vector<int> source(static_cast<std::size_t>(dataset.n()));
  for (const auto& [key, members] : strata) {
    (void)key;
    for (int pos : members) {
      source[static_cast<std::size_t>(pos)] =
          members[rng.uniform_int(members.size())];
    }
  }
  StudyDataset out;
  out.schema = dataset.schema;
  out.region = dataset.region;
  out.treatment = dataset.treatment;
  out.outcome.resize(dataset.n());
  out.x.resize(dataset.n(), dataset.x.cols());
  out.u.resize(dataset.n(), dataset.u.cols());
  out.u_present.resize(static_cast<std::size_t>(dataset.n()));
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    const int s = source[static_cast<std::size_t>(i)];
    out.outcome[i] = dataset.outcome[s];
    out.x.row(i) = dataset.x.row(s);
    out.u.row(i) = dataset.u.row(s);
    out.u_present[static_cast<std::size_t>(i)] =
        dataset.u_present[static_cast<std::size_t>(s)];
  }
  out.finalize();
  return out;
}

TauEstimate estimate_csb_ivw(const StudyDataset& dataset,
                             const DesignPropensity& design,
                             const PValueTable& pvalues, double gamma0,
                             double gamma1, const CsbOptions& options) {
  for (double g : {gamma0, gamma1}) {
    if (g < 0.0 || g > 1.0) {
      throw std::invalid_argument("estimate_csb_ivw: gamma must lie in [0,1]");
    }
  }
  SampleContext ctx{dataset, design, options.clip_eps, std::nullopt};
  CsbArmEvaluator eval1(ctx, 1, arm_pvalues(dataset, pvalues, 1), options);
  CsbArmEvaluator eval0(ctx, 0, arm_pvalues(dataset, pvalues, 0), options);
  CsbArm a1 = eval1.eval(gamma1);
  CsbArm a0 = eval0.eval(gamma0);

  const Eigen::Index n_used =
      dataset.n_target + static_cast<Eigen::Index>(a1.selected.size()) +
      static_cast<Eigen::Index>(a0.selected.size());
  TauEstimate est = assemble_tau(dataset, options.method_name(),
                                 std::move(a1.parts), std::move(a0.parts),
                                 n_used, options.alpha);
  est.gamma = {gamma0, gamma1};
  est.borrowed_indices[0] = std::move(a0.selected);
  est.borrowed_indices[1] = std::move(a1.selected);
  return est;
}

namespace {

// Per-arm curve data over one set of shared bootstrap resamples.
struct CurveAccumulator {
  std::vector<double> theta_orig;               // [g]
  double theta_nb_orig = 0.0;
  std::vector<std::vector<double>> theta_boot;  // [l][g]
  std::vector<double> theta_nb_boot;            // [l]
};

double sample_variance(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / (n - 1.0);
}

// Evaluates theta_nb and theta_csb(gamma) over the grid for the requested
// arms on one sample, deduplicating thresholds that select the same set.
void eval_sample(const StudyDataset& d, const DesignPropensity& design,
                 const PValueTable& pv, const std::vector<int>& arms,
                 const std::vector<double>& grid, const CsbOptions& opts,
                 double* theta_out /* [arm slot * |grid| + g] */,
                 double* theta_nb_out) {
  SampleContext ctx{d, design, opts.clip_eps, std::nullopt};
  for (std::size_t ai = 0; ai < arms.size(); ++ai) {
    const int arm = arms[ai];
    CsbArmEvaluator eval(ctx, arm, arm_pvalues(d, pv, arm), opts);
    theta_nb_out[ai] =
        nb_arm_parts(d, design, arm, opts.use_ivw).theta_hat;
    std::map<std::size_t, double> by_count;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const std::size_t count = eval.selected_count(grid[g]);
      auto it = by_count.find(count);
      double th;
      if (it != by_count.end()) {
        th = it->second;
      } else if (count == 0) {
        th = theta_nb_out[ai];
        by_count[count] = th;
      } else {
        th = eval.eval(grid[g]).parts.theta_hat;
        by_count[count] = th;
      }
      theta_out[ai * grid.size() + g] = th;
    }
  }
}

void run_curve_engine(const StudyDataset& dataset,
                      const DesignPropensity& design,
                      const PValueTable& pvalues,
                      const std::vector<int>& arms,
                      const std::vector<double>& grid, int L,
                      std::uint64_t seed, const CsbOptions& opts,
                      std::vector<CurveAccumulator>& acc,
                      std::vector<std::string>& flags) {
  if (L < 2) throw std::invalid_argument("mse_curve: L must be >= 2");
  for (double g : grid) {
    if (g < 0.0 || g > 1.0) {
      throw std::invalid_argument("mse_curve: grid values must lie in [0,1]");
    }
  }
  acc.assign(arms.size(), CurveAccumulator{});
  for (auto& a : acc) {
    a.theta_orig.resize(grid.size());
    a.theta_boot.assign(static_cast<std::size_t>(L),
                        std::vector<double>(grid.size()));
    a.theta_nb_boot.resize(static_cast<std::size_t>(L));
  }

  std::vector<std::string> sample_flags(static_cast<std::size_t>(L) + 1);
  parallel_for(static_cast<std::size_t>(L) + 1, opts.workers,
               [&](std::size_t s) {
    std::vector<double> theta(arms.size() * grid.size());
    std::vector<double> theta_nb(arms.size());
    if (s == 0) {
      eval_sample(dataset, design, pvalues, arms, grid, opts, theta.data(),
                  theta_nb.data());
      for (std::size_t ai = 0; ai < arms.size(); ++ai) {
        std::copy(theta.begin() + ai * grid.size(),
                  theta.begin() + (ai + 1) * grid.size(),
                  acc[ai].theta_orig.begin());
        acc[ai].theta_nb_orig = theta_nb[ai];
      }
      return;
    }
    const std::uint64_t base =
        derive_seed(seed, {streams::kBootstrap, static_cast<std::uint64_t>(s)});
    StudyDataset resample;
    bool ok = false;
    for (int attempt = 0; attempt < kResampleRetries && !ok; ++attempt) {
      resample = bootstrap_resample(
          dataset,
          derive_seed(base, {1, static_cast<std::uint64_t>(attempt)}));
      int arm_count[2] = {0, 0};
      for (int i : resample.target_rows) ++arm_count[resample.treatment[i]];
      ok = arm_count[0] > 0 && arm_count[1] > 0;
    }
    if (!ok) {
      sample_flags[s] = "resample " + std::to_string(s) +
                        ": target arm empty after retries";
      return;  // slot keeps zeros; flagged
    }
    const PValueTable pv =
        compute_pvalues(resample, opts.K, derive_seed(base, {2}));
    eval_sample(resample, design, pv, arms, grid, opts, theta.data(),
                theta_nb.data());
    for (std::size_t ai = 0; ai < arms.size(); ++ai) {
      std::copy(theta.begin() + ai * grid.size(),
                theta.begin() + (ai + 1) * grid.size(),
                acc[ai].theta_boot[s - 1].begin());
      acc[ai].theta_nb_boot[s - 1] = theta_nb[ai];
    }
  });
  for (auto& f : sample_flags) {
    if (!f.empty()) flags.push_back(f);
  }
}

MseCurve curve_from_accumulator(const CurveAccumulator& a, int arm,
                                const std::vector<double>& grid, int L,
                                std::uint64_t seed) {
  MseCurve c;
  c.arm = arm;
  c.grid = grid;
  c.L = L;
  c.seed = seed;
  const std::size_t G = grid.size();
  c.mse_hat.resize(G);
  c.sq_diff.resize(G);
  c.var_diff.resize(G);
  c.var_csb.resize(G);
  std::vector<double> diff(static_cast<std::size_t>(L));
  std::vector<double> csb(static_cast<std::size_t>(L));
  for (std::size_t g = 0; g < G; ++g) {
    for (int l = 0; l < L; ++l) {
      csb[static_cast<std::size_t>(l)] = a.theta_boot[static_cast<std::size_t>(l)][g];
      diff[static_cast<std::size_t>(l)] =
          csb[static_cast<std::size_t>(l)] -
          a.theta_nb_boot[static_cast<std::size_t>(l)];
    }
    const double d0 = a.theta_orig[g] - a.theta_nb_orig;
    c.sq_diff[g] = d0 * d0;
    c.var_diff[g] = sample_variance(diff);
    c.var_csb[g] = sample_variance(csb);
    c.mse_hat[g] = c.sq_diff[g] - c.var_diff[g] + c.var_csb[g];
  }
  return c;
}

}  // namespace

MseCurve mse_curve(const StudyDataset& dataset, const DesignPropensity& design,
                   const PValueTable& pvalues, int arm,
                   const std::vector<double>& grid, int L, std::uint64_t seed,
                   const CsbOptions& options) {
  std::vector<CurveAccumulator> acc;
  std::vector<std::string> flags;
  run_curve_engine(dataset, design, pvalues, {arm}, grid, L, seed, options,
                   acc, flags);
  MseCurve c = curve_from_accumulator(acc[0], arm, grid, L, seed);
  c.flags = std::move(flags);
  return c;
}

double choose_threshold(const MseCurve& curve) {
  if (curve.grid.empty()) {
    throw std::invalid_argument("choose_threshold: empty curve");
  }
  double best_gamma = curve.grid[0];
  double best = curve.mse_hat[0];
  for (std::size_t g = 1; g < curve.grid.size(); ++g) {
    if (curve.mse_hat[g] <= best) {  // ties break toward the larger gamma
      best = curve.mse_hat[g];
      best_gamma = curve.grid[g];
    }
  }
  return best_gamma;
}

CsbPipelineResult csb_pipeline_detailed(const StudyDataset& dataset,
                                        const DesignPropensity& design,
                                        const CsbOptions& options) {
  CsbPipelineResult out;
  out.pvalues = compute_pvalues(dataset, options.K, options.seed);
  const std::vector<double> grid = options.resolved_grid();

  std::vector<CurveAccumulator> acc;
  std::vector<std::string> flags;
  run_curve_engine(dataset, design, out.pvalues, {0, 1}, grid, options.L,
                   options.seed, options, acc, flags);
  for (int arm : {0, 1}) {
    out.curves[static_cast<std::size_t>(arm)] = curve_from_accumulator(
        acc[static_cast<std::size_t>(arm)], arm, grid, options.L,
        options.seed);
    out.curves[static_cast<std::size_t>(arm)].flags = flags;
  }
  const double g0 = choose_threshold(out.curves[0]);
  const double g1 = choose_threshold(out.curves[1]);
  out.estimate =
      estimate_csb_ivw(dataset, design, out.pvalues, g0, g1, options);
  return out;
}

TauEstimate csb_pipeline(const StudyDataset& dataset,
                         const DesignPropensity& design,
                         const CsbOptions& options) {
  return csb_pipeline_detailed(dataset, design, options).estimate;
}

}  // namespace rsate
