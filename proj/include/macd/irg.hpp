// SPDX-License-Identifier: Apache-2.0
//
// Inductive representation generator: at inference, a user who is cold-start
// in the target domain borrows the target-domain representation of the user
// whose other-domain representation is most cosine-similar.
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "macd/tensor.hpp"

namespace macd {

template <typename Scalar>
struct IrgBatch {
  Matrix<Scalar> fused_x;  // Ō^X, N×d
  Matrix<Scalar> fused_y;  // Ō^Y, N×d
  std::vector<bool> cold_start_x;
  std::vector<bool> cold_start_y;
  // Users with any observed history in the domain. Empty means "all observed".
  std::vector<bool> observed_x;
  std::vector<bool> observed_y;

  const Matrix<Scalar>& fused(Domain d) const { return d == Domain::X ? fused_x : fused_y; }
  const std::vector<bool>& cold_start(Domain d) const { return d == Domain::X ? cold_start_x : cold_start_y; }
  bool observed(Domain d, std::size_t i) const {
    const auto& o = d == Domain::X ? observed_x : observed_y;
    return o.empty() || o[i];
  }
};

template <typename Scalar>
struct IrgResult {
  Matrix<Scalar> representations;  // final target-domain rows, N×d
  std::vector<Index> nearest;      // donor per row; -1 where the row was kept
  int fallbacks = 0;               // cold-start rows left without a donor
};

/// Rows of `m` scaled to unit norm; zero rows stay zero.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& m) {
  Matrix<Scalar> out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar n = out.row(i).norm();
    if (n > Scalar(0)) out.row(i) /= n;
  }
  return out;
}

/// For each query row with `need[i]`, the index of the candidate row with the
/// largest cosine similarity among rows with `allowed[j]`, excluding j == i when
/// `exclude_self`. Ties go to the lowest index; -1 when nothing is allowed.
template <typename Scalar>
std::vector<Index> cosine_nearest(const Matrix<Scalar>& queries, const Matrix<Scalar>& candidates,
                                  const std::vector<bool>& need, const std::vector<bool>& allowed,
                                  bool exclude_self) {
  const Matrix<Scalar> qn = normalize_rows(queries);
  const Matrix<Scalar> cn = normalize_rows(candidates);
  std::vector<Index> nearest(static_cast<std::size_t>(queries.rows()), -1);
  for (Index i = 0; i < queries.rows(); ++i) {
    if (!need[static_cast<std::size_t>(i)]) continue;
    const Vector<Scalar> sims = cn * qn.row(i).transpose();
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < candidates.rows(); ++j) {
      if (!allowed[static_cast<std::size_t>(j)] || (exclude_self && j == i)) continue;
      if (sims(j) > best) {
        best = sims(j);
        nearest[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  return nearest;
}

/// Batch-scope replacement following the reference pseudocode: similarity on
/// the other domain's Ō, donors drawn from the same batch. Donors must be
/// observed in both domains, so neither self nor any user cold-start in the
/// target domain can be selected.
template <typename Scalar>
IrgResult<Scalar> irg_replace(const IrgBatch<Scalar>& batch, Domain target) {
  const Domain source = other(target);
  const auto n = static_cast<std::size_t>(batch.fused_x.rows());
  if (batch.fused_y.rows() != batch.fused_x.rows() || batch.fused_x.cols() != batch.fused_y.cols())
    throw std::invalid_argument("irg_replace: Ō^X and Ō^Y shapes differ");
  if (batch.cold_start_x.size() != n || batch.cold_start_y.size() != n)
    throw std::invalid_argument("irg_replace: cold-start label length mismatch");
  if (n < 2) throw std::invalid_argument("irg_replace: batch needs at least 2 users");
  for (std::size_t i = 0; i < n; ++i)
    if (batch.cold_start_x[i] && batch.cold_start_y[i])
      throw std::invalid_argument("irg_replace: user cold-start in both domains");

  const auto& cold = batch.cold_start(target);
  std::vector<bool> allowed(n);
  for (std::size_t j = 0; j < n; ++j)
    allowed[j] = !cold[j] && batch.observed(target, j) && batch.observed(source, j);

  IrgResult<Scalar> r;
  r.representations = batch.fused(target);
  r.nearest = cosine_nearest(batch.fused(source), batch.fused(source), cold, allowed, true);
  for (std::size_t i = 0; i < n; ++i) {
    if (!cold[i]) continue;
    const Index donor = r.nearest[i];
    if (donor < 0) {
      ++r.fallbacks;
      continue;
    }
    r.representations.row(static_cast<Index>(i)) = batch.fused(target).row(donor);
  }
  return r;
}

/// Catalog-scope replacement: donors come from a fixed reference population
/// (e.g. training users observed in both domains) instead of the batch.
template <typename Scalar>
IrgResult<Scalar> irg_replace_from_catalog(const Matrix<Scalar>& query_source, const Matrix<Scalar>& query_target,
                                           const std::vector<bool>& cold_start,
                                           const Matrix<Scalar>& catalog_source,
                                           const Matrix<Scalar>& catalog_target) {
  if (catalog_source.rows() != catalog_target.rows())
    throw std::invalid_argument("irg_replace_from_catalog: catalog shapes differ");
  std::vector<bool> allowed(static_cast<std::size_t>(catalog_source.rows()), true);
  IrgResult<Scalar> r;
  r.representations = query_target;
  r.nearest = cosine_nearest(query_source, catalog_source, cold_start, allowed, false);
  for (std::size_t i = 0; i < cold_start.size(); ++i) {
    if (!cold_start[i]) continue;
    if (r.nearest[i] < 0) {
      ++r.fallbacks;
      continue;
    }
    r.representations.row(static_cast<Index>(i)) = catalog_target.row(r.nearest[i]);
  }
  return r;
}

}  // namespace macd
