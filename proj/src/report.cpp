#include "rsate/report.hpp"

#include <charconv>
#include <cmath>

namespace rsate {

using json = nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

json tau_to_json(const TauEstimate& est, bool include_indices) {
  json j{{"method", est.method},
         {"tau_hat", est.tau_hat},
         {"se", est.se},
         {"ci_lower", est.ci_lower},
         {"ci_upper", est.ci_upper},
         {"alpha", est.alpha},
         {"p_value_asymptotic", est.asymptotic_pvalue()},
         {"theta1", est.theta1.theta_hat},
         {"theta0", est.theta0.theta_hat},
         {"n_used", est.n_used},
         {"borrowed_count", est.borrowed_count()},
         {"flags", est.flags}};
  if (est.gamma[0] >= 0.0 || est.gamma[1] >= 0.0) {
    j["gamma"] = {{"arm0", est.gamma[0]}, {"arm1", est.gamma[1]}};
  }
  if (include_indices) {
    j["borrowed_indices"] = {{"arm0", est.borrowed_indices[0]},
                             {"arm1", est.borrowed_indices[1]}};
  }
  return j;
}

json frt_to_json(const FrtResult& result, bool include_draws) {
  json j{{"statistic", result.statistic_tag},
         {"t_obs", result.t_obs},
         {"p_two_sided", result.p_two_sided},
         {"p_one_sided", result.p_one_sided},
         {"B", result.B},
         {"seed", result.seed},
         {"exhaustive", result.exhaustive},
         {"n_failed_draws", result.n_failed_draws}};
  if (include_draws) j["draws"] = result.draws;
  return j;
}

namespace {

void write_config_echo(std::ostream& out, const json& config_echo) {
  out << "# config: " << config_echo.dump() << "\n";
}

}  // namespace

void write_pvalues_csv(std::ostream& out, const PValueTable& table,
                       const json& config_echo) {
  write_config_echo(out, config_echo);
  out << "record_index,arm,p_value\n";
  for (int arm : {0, 1}) {
    for (const auto& [idx, p] : table.entries[static_cast<std::size_t>(arm)]) {
      out << idx << "," << arm << "," << format_double(p) << "\n";
    }
  }
}

void write_mse_curve_csv(std::ostream& out, const MseCurve& curve0,
                         const MseCurve& curve1, const json& config_echo) {
  write_config_echo(out, config_echo);
  out << "arm,gamma,mse_hat,sq_diff,var_diff,var_csb\n";
  for (const MseCurve* c : {&curve0, &curve1}) {
    for (std::size_t g = 0; g < c->grid.size(); ++g) {
      out << c->arm << "," << format_double(c->grid[g]) << ","
          << format_double(c->mse_hat[g]) << "," << format_double(c->sq_diff[g])
          << "," << format_double(c->var_diff[g]) << ","
          << format_double(c->var_csb[g]) << "\n";
    }
  }
}

void write_metrics_csv(std::ostream& out, const MetricsTable& table,
                       const json& config_echo) {
  write_config_echo(out, config_echo);
  out << "scenario,n_target,n_aux,cov_scenario,eps,alpha0,alpha1,rho,b0,b1,"
         "tau_shift,tau_true,method,mse,mse_pct,bias,coverage,rejection,"
         "n_rep,n_fail\n";
  for (const MetricsRow& r : table.rows) {
    out << r.scenario << "," << r.dgp.n_target << "," << r.dgp.n_aux << ","
        << (r.dgp.scenario == CovariateScenario::correlated ? "correlated"
                                                            : "independent")
        << "," << format_double(r.dgp.eps) << "," << format_double(r.dgp.alpha0)
        << "," << format_double(r.dgp.alpha1) << "," << format_double(r.dgp.rho)
        << "," << format_double(r.dgp.b0) << "," << format_double(r.dgp.b1)
        << "," << format_double(r.dgp.tau_shift) << ","
        << format_double(r.tau_true) << "," << r.method << ","
        << format_double(r.mse) << "," << format_double(r.mse_pct) << ","
        << format_double(r.bias) << "," << format_double(r.coverage) << ","
        << format_double(r.rejection) << "," << r.n_rep << "," << r.n_fail
        << "\n";
  }
}

}  // namespace rsate
