// Structured-record and CSV emission for estimates, p-value tables, MSE
// curves, randomization-test results, and simulation metrics. Formatting is
// shortest-round-trip and locale-free so reruns are byte-identical.

#pragma once

#include <nlohmann/json.hpp>
#include <ostream>
#include <string>

#include "rsate/csb.hpp"
#include "rsate/estimates.hpp"
#include "rsate/frt.hpp"
#include "rsate/sim.hpp"

namespace rsate {

std::string format_double(double v);

nlohmann::json tau_to_json(const TauEstimate& est,
                           bool include_indices = true);

nlohmann::json frt_to_json(const FrtResult& result,
                           bool include_draws = false);

void write_pvalues_csv(std::ostream& out, const PValueTable& table,
                       const nlohmann::json& config_echo);

void write_mse_curve_csv(std::ostream& out, const MseCurve& curve0,
                         const MseCurve& curve1,
                         const nlohmann::json& config_echo);

void write_metrics_csv(std::ostream& out, const MetricsTable& table,
                       const nlohmann::json& config_echo);

}  // namespace rsate
