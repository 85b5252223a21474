#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rsate/dataset.hpp"

namespace rsate {

inline Eigen::MatrixXd gather_rows(const Eigen::Ref<const Eigen::MatrixXd>& m,
                                   const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(k) = m.row(rows[k]);
  return out;
}

inline Eigen::VectorXd gather(const Eigen::Ref<const Eigen::VectorXd>& v,
                              const std::vector<int>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = v[rows[k]];
  return out;
}

// [X U] design for rows that all carry U.
inline Eigen::MatrixXd gather_xu(const StudyDataset& d,
                                 const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      d.x.cols() + d.u.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(k).head(d.x.cols()) = d.x.row(rows[k]);
    out.row(k).tail(d.u.cols()) = d.u.row(rows[k]);
  }
  return out;
}

}  // namespace rsate
