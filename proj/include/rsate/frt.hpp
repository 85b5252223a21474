// Conditional Fisher randomization test: auxiliary-region assignments stay
// fixed at their observed values, target-region assignments are re-drawn
// from the declared randomization design, and the statistic is recomputed
// under the sharp null (observed outcomes reused unchanged).

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rsate/dataset.hpp"

namespace rsate {

struct RandomizationScheme {
  enum class Kind { bernoulli, complete, stratified_complete };
  Kind kind = Kind::complete;
  double p = 0.5;  // bernoulli
  int n1 = -1;     // complete; -1 = observed target treated count
  // stratified_complete: stratum id per target row (aligned with
  // dataset.target_rows) and treated count per stratum (-1 = observed).
  std::vector<int> strata;
  std::map<int, int> n1_by_stratum;

  static RandomizationScheme bernoulli(double p = 0.5);
  static RandomizationScheme complete(int n1 = -1);
  static RandomizationScheme stratified(std::vector<int> strata,
                                        std::map<int, int> n1_by_stratum = {});
};

// Full-length assignment vector: auxiliary entries equal the observed
// treatment, target entries are drawn from the scheme.
std::vector<int> rerandomize_target(const StudyDataset& dataset,
                                    const RandomizationScheme& scheme,
                                    std::uint64_t seed);

// Copy of the dataset with the treatment column replaced.
StudyDataset with_assignment(const StudyDataset& dataset,
                             const std::vector<int>& assignment);

// Test statistic contract: a pure function of the dataset and a candidate
// assignment. The seed feeds any internal randomness (fold splits, bootstrap
// streams) so that draws are independently reproducible.
using FrtStatistic = std::function<double(
    const StudyDataset&, const std::vector<int>& assignment,
    std::uint64_t seed)>;

struct FrtResult {
  double t_obs = 0.0;
  std::vector<double> draws;
  double p_two_sided = 1.0;
  double p_one_sided = 1.0;
  int B = 0;
  std::uint64_t seed = 0;
  std::string statistic_tag;
  int n_failed_draws = 0;  // draws recorded as +inf after a statistic failure
  bool exhaustive = false;
};

// Monte Carlo FRT with the add-one correction:
//   two-sided p = (1 + #{|T*| >= |T|}) / (B + 1)
//   one-sided p = (1 + #{T* >= T}) / (B + 1).
FrtResult frt_pvalue(const StudyDataset& dataset, const FrtStatistic& statistic,
                     const RandomizationScheme& scheme, int B,
                     std::uint64_t seed, std::string statistic_tag = "",
                     int workers = 1);

// Exact enumeration over all complete-randomization assignments (no add-one
// correction); p = #{|T*| >= |T|} / #assignments. Used as the small-sample
// oracle. Throws if the assignment space exceeds max_assignments.
FrtResult frt_pvalue_exhaustive(const StudyDataset& dataset,
                                const FrtStatistic& statistic,
                                std::uint64_t seed,
                                std::string statistic_tag = "",
                                std::int64_t max_assignments = 200000);

}  // namespace rsate
