#include "rsate/multiregion.hpp"

#include <algorithm>
#include <stdexcept>

#include "rsate/rng.hpp"

namespace rsate {

namespace {

// Rows of regions {1, r} with X restricted to the named subset. Bypasses
// from_records so that an empty shared subset (zero-width X) stays legal.
struct SubDataset {
  StudyDataset data;
  std::vector<int> rows;  // original record index per sub row
};

SubDataset restrict_to_region(const StudyDataset& d, int region,
                              const std::vector<std::string>& shared) {
  if (region == kTargetRegion) {
    throw std::invalid_argument("region restriction: region 1 is the target");
  }
  std::vector<Eigen::Index> cols;
  for (const auto& name : shared) {
    const auto it = std::find(d.schema.shared_names.begin(),
                              d.schema.shared_names.end(), name);
    if (it == d.schema.shared_names.end()) {
      throw std::invalid_argument("region restriction: unknown covariate '" +
                                  name + "'");
    }
    cols.push_back(it - d.schema.shared_names.begin());
  }

  SubDataset out;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    if (d.region[i] == kTargetRegion || d.region[i] == region) {
      out.rows.push_back(static_cast<int>(i));
    }
  }
  bool region_present = false;
  for (int i : out.rows) region_present |= d.region[i] == region;
  if (!region_present) {
    throw std::invalid_argument("region " + std::to_string(region) +
                                " absent from dataset");
  }

  const Eigen::Index m = static_cast<Eigen::Index>(out.rows.size());
  StudyDataset& s = out.data;
  s.schema = d.schema;
  s.schema.shared_names = shared;
  s.region.resize(m);
  s.treatment.resize(m);
  s.outcome.resize(m);
  s.x.resize(m, static_cast<Eigen::Index>(cols.size()));
  s.u.resize(m, d.u.cols());
  s.u_present.resize(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) {
    const int i = out.rows[static_cast<std::size_t>(k)];
    s.region[k] = d.region[i];
    s.treatment[k] = d.treatment[i];
    s.outcome[k] = d.outcome[i];
    for (std::size_t c = 0; c < cols.size(); ++c) {
      s.x(k, static_cast<Eigen::Index>(c)) = d.x(i, cols[c]);
    }
    s.u.row(k) = d.u.row(i);
    s.u_present[static_cast<std::size_t>(k)] =
        d.u_present[static_cast<std::size_t>(i)];
  }
  s.finalize();
  return out;
}

// Scatters a sub-dataset estimate's per-record vectors back to full length.
void scatter_vectors(TauEstimate& est, const std::vector<int>& rows,
                     Eigen::Index n_full) {
  auto scatter = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(n_full);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      full[rows[k]] = v[static_cast<Eigen::Index>(k)];
    }
    return full;
  };
  est.influence = scatter(est.influence);
  est.theta1.contributions = scatter(est.theta1.contributions);
  est.theta0.contributions = scatter(est.theta0.contributions);
  for (auto arm : {0, 1}) {
    for (int& idx : est.borrowed_indices[static_cast<std::size_t>(arm)]) {
      idx = rows[static_cast<std::size_t>(idx)];
    }
  }
}

// The design propensity evaluated through the original records, so tables
// and stratified designs survive the row restriction.
DesignPropensity restrict_design(const StudyDataset& d,
                                 const DesignPropensity& design,
                                 const std::vector<int>& rows) {
  Eigen::VectorXd p(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    p[static_cast<Eigen::Index>(k)] =
        design.e1(d, static_cast<Eigen::Index>(rows[k]));
  }
  return DesignPropensity::table(std::move(p));
}

}  // namespace

TauEstimate estimate_fb_ivw_region(const StudyDataset& dataset,
                                   const DesignPropensity& design, int region,
                                   const std::vector<std::string>& shared,
                                   double alpha, double clip_eps) {
  SubDataset sub = restrict_to_region(dataset, region, shared);
  const DesignPropensity sub_design =
      restrict_design(dataset, design, sub.rows);
  TauEstimate est = estimate_fb_ivw(sub.data, sub_design, alpha, clip_eps);
  est.method = "FB-IVW(region " + std::to_string(region) + ")";
  if (shared.empty()) {
    est.flags.push_back("region " + std::to_string(region) +
                        ": empty shared set, intercept-only nuisances");
  }
  scatter_vectors(est, sub.rows, dataset.n());
  return est;
}

Eigen::MatrixXd influence_covariance(
    const std::vector<Eigen::VectorXd>& influences, Eigen::Index n) {
  const Eigen::Index s = static_cast<Eigen::Index>(influences.size());
  for (const auto& v : influences) {
    if (v.size() != n) {
      throw std::invalid_argument(
          "influence_covariance: vector length mismatch");
    }
  }
  Eigen::MatrixXd sigma(s, s);
  for (Eigen::Index a = 0; a < s; ++a) {
    for (Eigen::Index b = a; b < s; ++b) {
      const double c = influences[static_cast<std::size_t>(a)].dot(
                           influences[static_cast<std::size_t>(b)]) /
                       static_cast<double>(n);
      sigma(a, b) = c;
      sigma(b, a) = c;
    }
  }
  return sigma;
}

Eigen::VectorXd optimal_weights(const Eigen::MatrixXd& sigma_hat,
                                std::vector<std::string>* flags) {
  if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.rows() == 0) {
    throw std::invalid_argument("optimal_weights: sigma must be square");
  }
  const Eigen::Index s = sigma_hat.rows();
  Eigen::MatrixXd sigma = sigma_hat;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sigma);
  if (cod.rank() < s) {
    const double lambda =
        1e-8 * sigma.trace() / static_cast<double>(s);
    sigma += lambda * Eigen::MatrixXd::Identity(s, s);
    cod.compute(sigma);
    if (flags != nullptr) {
      flags->push_back("sigma_hat near-singular: ridge-regularized");
    }
  }
  Eigen::VectorXd raw = cod.solve(Eigen::VectorXd::Ones(s));
  const double denom = raw.sum();
  if (denom == 0.0 || !std::isfinite(denom)) {
    throw std::runtime_error("optimal_weights: weights are not identifiable");
  }
  return raw / denom;
}

RegionEstimates estimate_all_regions(const StudyDataset& dataset,
                                     const DesignPropensity& design,
                                     const RegionCovariateMap& map,
                                     double alpha, double clip_eps) {
  if (map.shared_of.empty()) {
    throw std::invalid_argument("estimate_all_regions: empty region map");
  }
  RegionEstimates out;
  out.n = dataset.n();
  out.alpha = alpha;
  std::vector<Eigen::VectorXd> influences;
  for (const auto& [region, shared] : map.shared_of) {
    TauEstimate est =
        estimate_fb_ivw_region(dataset, design, region, shared, alpha, clip_eps);
    out.labels.push_back(region);
    out.tau_hats.conservativeResize(out.labels.size());
    out.theta1s.conservativeResize(out.labels.size());
    out.theta0s.conservativeResize(out.labels.size());
    out.tau_hats[out.labels.size() - 1] = est.tau_hat;
    out.theta1s[out.labels.size() - 1] = est.theta1.theta_hat;
    out.theta0s[out.labels.size() - 1] = est.theta0.theta_hat;
    influences.push_back(std::move(est.influence));
    out.flags.insert(out.flags.end(), est.flags.begin(), est.flags.end());
  }
  out.sigma_hat = influence_covariance(influences, dataset.n());
  out.weights = optimal_weights(out.sigma_hat, &out.flags);
  return out;
}

TauEstimate combine(const RegionEstimates& estimates, std::string method) {
  if (estimates.weights.size() !=
      static_cast<Eigen::Index>(estimates.labels.size())) {
    throw std::invalid_argument("combine: weights missing");
  }
  TauEstimate est;
  est.method = std::move(method);
  est.alpha = estimates.alpha;
  est.tau_hat = estimates.weights.dot(estimates.tau_hats);
  est.theta1.arm = 1;
  est.theta0.arm = 0;
  est.theta1.theta_hat = estimates.weights.dot(estimates.theta1s);
  est.theta0.theta_hat = estimates.weights.dot(estimates.theta0s);
  const double v_hat =
      estimates.weights.dot(estimates.sigma_hat * estimates.weights);
  est.n_used = estimates.n;
  est.se = std::sqrt(std::max(v_hat, 0.0) / static_cast<double>(estimates.n));
  std::tie(est.ci_lower, est.ci_upper) = confidence_interval(
      est.tau_hat, std::max(v_hat, 0.0), estimates.n, estimates.alpha);
  est.flags = estimates.flags;
  return est;
}

TauEstimate select_by_region(const StudyDataset& dataset,
                             const DesignPropensity& design,
                             const RegionCovariateMap& map,
                             const CsbOptions& options) {
  if (map.shared_of.empty()) {
    throw std::invalid_argument("select_by_region: empty region map");
  }
  RegionEstimates regional;
  regional.n = dataset.n();
  regional.alpha = options.alpha;
  std::vector<Eigen::VectorXd> influences;
  std::array<std::vector<int>, 2> borrowed;
  for (const auto& [region, shared] : map.shared_of) {
    SubDataset sub = restrict_to_region(dataset, region, shared);
    const DesignPropensity sub_design =
        restrict_design(dataset, design, sub.rows);
    CsbOptions region_options = options;
    region_options.seed = derive_seed(
        options.seed, {streams::kCsb, static_cast<std::uint64_t>(region)});
    TauEstimate est = csb_pipeline(sub.data, sub_design, region_options);
    scatter_vectors(est, sub.rows, dataset.n());
    regional.labels.push_back(region);
    regional.tau_hats.conservativeResize(regional.labels.size());
    regional.theta1s.conservativeResize(regional.labels.size());
    regional.theta0s.conservativeResize(regional.labels.size());
    regional.tau_hats[regional.labels.size() - 1] = est.tau_hat;
    regional.theta1s[regional.labels.size() - 1] = est.theta1.theta_hat;
    regional.theta0s[regional.labels.size() - 1] = est.theta0.theta_hat;
    influences.push_back(std::move(est.influence));
    for (int arm : {0, 1}) {
      auto& dst = borrowed[static_cast<std::size_t>(arm)];
      const auto& src = est.borrowed_indices[static_cast<std::size_t>(arm)];
      dst.insert(dst.end(), src.begin(), src.end());
      regional.flags.push_back(
          "region " + std::to_string(region) + " arm " + std::to_string(arm) +
          ": gamma=" + std::to_string(est.gamma[static_cast<std::size_t>(arm)]) +
          ", borrowed=" + std::to_string(src.size()));
    }
  }
  regional.sigma_hat = influence_covariance(influences, dataset.n());
  regional.weights = optimal_weights(regional.sigma_hat, &regional.flags);

  TauEstimate est = combine(regional, std::string(options.method_name()) +
                                          "-multiregion");
  for (int arm : {0, 1}) {
    auto& idx = borrowed[static_cast<std::size_t>(arm)];
    std::sort(idx.begin(), idx.end());
    est.borrowed_indices[static_cast<std::size_t>(arm)] = std::move(idx);
  }
  est.flags.push_back("multiregion: region-wise CSB estimates combined by optimal weights");
  return est;
}

}  // namespace rsate
