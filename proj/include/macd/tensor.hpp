// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace macd {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// true marks a real (non-padding) position.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Dense item indices of one padded sequence; 0 is padding.
using IndexSequence = std::vector<int>;

enum class Domain : int { X = 0, Y = 1 };
enum class Behavior : int { Target = 0, Auxiliary = 1 };

inline constexpr std::array<Domain, 2> kDomains{Domain::X, Domain::Y};

constexpr int idx(Domain d) { return static_cast<int>(d); }
constexpr Domain other(Domain d) { return d == Domain::X ? Domain::Y : Domain::X; }
constexpr std::string_view name(Domain d) { return d == Domain::X ? "X" : "Y"; }
constexpr std::string_view name(Behavior b) {
  return b == Behavior::Target ? "target" : "auxiliary";
}

inline Mask padding_mask(const IndexSequence& indices) {
  Mask m(static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) m(static_cast<Index>(i)) = indices[i] != 0;
  return m;
}

}  // namespace macd
