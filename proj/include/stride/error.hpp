#pragma once

#include <stdexcept>
#include <string>

namespace stride {

/// Logarithm map evaluated at (or numerically indistinguishable from) the
/// rotation-angle-pi branch cut, where the principal branch is ambiguous.
struct LogMapBranchError : std::domain_error {
  explicit LogMapBranchError(const std::string& what) : std::domain_error(what) {}
};

/// Residual geometry where the gradient direction is undefined
/// (e.g. a range factor with coincident pose and anchor).
struct DegenerateGeometryError : std::domain_error {
  explicit DegenerateGeometryError(const std::string& what) : std::domain_error(what) {}
};

/// Structurally invalid graph edit (unknown key, self-loop, duplicate
/// timestamp, negative range, ...).
struct GraphError : std::invalid_argument {
  explicit GraphError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace stride
