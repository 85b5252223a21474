#include "rsate/frt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rsate/parallel.hpp"
#include "rsate/rng.hpp"

namespace rsate {

RandomizationScheme RandomizationScheme::bernoulli(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("randomization: p must lie in (0,1)");
  }
  RandomizationScheme s;
  s.kind = Kind::bernoulli;
  s.p = p;
  return s;
}

RandomizationScheme RandomizationScheme::complete(int n1) {
  RandomizationScheme s;
  s.kind = Kind::complete;
  s.n1 = n1;
  return s;
}

RandomizationScheme RandomizationScheme::stratified(
    std::vector<int> strata, std::map<int, int> n1_by_stratum) {
  RandomizationScheme s;
  s.kind = Kind::stratified_complete;
  s.strata = std::move(strata);
  s.n1_by_stratum = std::move(n1_by_stratum);
  return s;
}

std::vector<int> rerandomize_target(const StudyDataset& dataset,
                                    const RandomizationScheme& scheme,
                                    std::uint64_t seed) {
  std::vector<int> assignment(static_cast<std::size_t>(dataset.n()));
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    assignment[static_cast<std::size_t>(i)] = dataset.treatment[i];
  }
  Rng rng(seed);
  switch (scheme.kind) {
    case RandomizationScheme::Kind::bernoulli: {
      for (int i : dataset.target_rows) {
        assignment[static_cast<std::size_t>(i)] = rng.bernoulli(scheme.p);
      }
      break;
    }
    case RandomizationScheme::Kind::complete: {
      int n1 = scheme.n1;
      if (n1 < 0) {
        n1 = 0;
        for (int i : dataset.target_rows) n1 += dataset.treatment[i];
      }
      if (n1 > static_cast<int>(dataset.target_rows.size())) {
        throw std::invalid_argument("randomization: n1 exceeds target size");
      }
      std::vector<int> rows = dataset.target_rows;
      rng.shuffle(rows);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        assignment[static_cast<std::size_t>(rows[k])] =
            k < static_cast<std::size_t>(n1) ? 1 : 0;
      }
      break;
    }
    case RandomizationScheme::Kind::stratified_complete: {
      if (scheme.strata.size() != dataset.target_rows.size()) {
        throw std::invalid_argument(
            "randomization: strata must align with target rows");
      }
      std::map<int, std::vector<int>> members;  // stratum -> target rows
      for (std::size_t k = 0; k < scheme.strata.size(); ++k) {
        members[scheme.strata[k]].push_back(dataset.target_rows[k]);
      }
      for (auto& [stratum, rows] : members) {
        int n1 = -1;
        auto it = scheme.n1_by_stratum.find(stratum);
        if (it != scheme.n1_by_stratum.end()) n1 = it->second;
        if (n1 < 0) {
          n1 = 0;
          for (int i : rows) n1 += dataset.treatment[i];
        }
        if (n1 > static_cast<int>(rows.size())) {
          throw std::invalid_argument(
              "randomization: stratum treated count infeasible");
        }
        rng.shuffle(rows);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          assignment[static_cast<std::size_t>(rows[k])] =
              k < static_cast<std::size_t>(n1) ? 1 : 0;
        }
      }
      break;
    }
  }
  return assignment;
}

StudyDataset with_assignment(const StudyDataset& dataset,
                             const std::vector<int>& assignment) {
  if (assignment.size() != static_cast<std::size_t>(dataset.n())) {
    throw std::invalid_argument("with_assignment: length mismatch");
  }
  StudyDataset out = dataset;
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    out.treatment[i] = assignment[static_cast<std::size_t>(i)];
  }
  out.finalize();
  return out;
}

namespace {

std::pair<double, double> pvalues_from_draws(double t_obs,
                                             const std::vector<double>& draws,
                                             bool add_one) {
  std::int64_t two = 0, one = 0;
  for (double t : draws) {
    if (std::abs(t) >= std::abs(t_obs)) ++two;
    if (t >= t_obs) ++one;
  }
  const double denom = static_cast<double>(draws.size()) + (add_one ? 1.0 : 0.0);
  const double num_off = add_one ? 1.0 : 0.0;
  return {(num_off + static_cast<double>(two)) / denom,
          (num_off + static_cast<double>(one)) / denom};
}

}  // namespace

FrtResult frt_pvalue(const StudyDataset& dataset, const FrtStatistic& statistic,
                     const RandomizationScheme& scheme, int B,
                     std::uint64_t seed, std::string statistic_tag,
                     int workers) {
  if (B < 1) throw std::invalid_argument("frt_pvalue: B must be >= 1");
  FrtResult out;
  out.B = B;
  out.seed = seed;
  out.statistic_tag = std::move(statistic_tag);

  std::vector<int> observed(static_cast<std::size_t>(dataset.n()));
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    observed[static_cast<std::size_t>(i)] = dataset.treatment[i];
  }
  out.t_obs =
      statistic(dataset, observed, derive_seed(seed, {streams::kFrtDraw, 0}));

  out.draws.assign(static_cast<std::size_t>(B), 0.0);
  std::vector<std::uint8_t> failed(static_cast<std::size_t>(B), 0);
  parallel_for(static_cast<std::size_t>(B), workers, [&](std::size_t b) {
    const std::uint64_t draw_seed =
        derive_seed(seed, {streams::kFrtDraw, static_cast<std::uint64_t>(b + 1)});
    const std::vector<int> assignment =
        rerandomize_target(dataset, scheme, derive_seed(draw_seed, {1}));
    try {
      out.draws[b] = statistic(dataset, assignment, derive_seed(draw_seed, {2}));
    } catch (...) {
      out.draws[b] = std::numeric_limits<double>::infinity();
      failed[b] = 1;
    }
  });
  for (auto f : failed) out.n_failed_draws += f;

  std::tie(out.p_two_sided, out.p_one_sided) =
      pvalues_from_draws(out.t_obs, out.draws, /*add_one=*/true);
  return out;
}

FrtResult frt_pvalue_exhaustive(const StudyDataset& dataset,
                                const FrtStatistic& statistic,
                                std::uint64_t seed, std::string statistic_tag,
                                std::int64_t max_assignments) {
  const int m = static_cast<int>(dataset.target_rows.size());
  int n1 = 0;
  for (int i : dataset.target_rows) n1 += dataset.treatment[i];

  // Count of complete-randomization assignments: C(m, n1).
  double count = 1.0;
  for (int k = 1; k <= n1; ++k) {
    count = count * static_cast<double>(m - n1 + k) / static_cast<double>(k);
  }
  if (count > static_cast<double>(max_assignments)) {
    throw std::invalid_argument(
        "frt_pvalue_exhaustive: assignment space too large");
  }

  FrtResult out;
  out.seed = seed;
  out.statistic_tag = std::move(statistic_tag);
  out.exhaustive = true;

  std::vector<int> observed(static_cast<std::size_t>(dataset.n()));
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    observed[static_cast<std::size_t>(i)] = dataset.treatment[i];
  }
  out.t_obs =
      statistic(dataset, observed, derive_seed(seed, {streams::kFrtDraw, 0}));

  // Lexicographic enumeration of all size-n1 treated subsets.
  std::vector<int> comb(static_cast<std::size_t>(n1));
  for (int k = 0; k < n1; ++k) comb[static_cast<std::size_t>(k)] = k;
  std::vector<int> assignment = observed;
  std::uint64_t index = 0;
  while (true) {
    for (int i : dataset.target_rows) assignment[static_cast<std::size_t>(i)] = 0;
    for (int k : comb) {
      assignment[static_cast<std::size_t>(dataset.target_rows[static_cast<std::size_t>(k)])] = 1;
    }
    ++index;
    try {
      out.draws.push_back(statistic(
          dataset, assignment, derive_seed(seed, {streams::kFrtDraw, index})));
    } catch (...) {
      out.draws.push_back(std::numeric_limits<double>::infinity());
      ++out.n_failed_draws;
    }
    // advance combination
    int pos = n1 - 1;
    while (pos >= 0 && comb[static_cast<std::size_t>(pos)] == m - n1 + pos) --pos;
    if (pos < 0) break;
    ++comb[static_cast<std::size_t>(pos)];
    for (int k = pos + 1; k < n1; ++k) {
      comb[static_cast<std::size_t>(k)] = comb[static_cast<std::size_t>(k - 1)] + 1;
    }
  }
  out.B = static_cast<int>(out.draws.size());
  std::tie(out.p_two_sided, out.p_one_sided) =
      pvalues_from_draws(out.t_obs, out.draws, /*add_one=*/false);
  return out;
}

}  // namespace rsate
