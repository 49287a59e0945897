#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace drofolio {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised when input data (not configuration) makes an estimate impossible:
/// malformed CSV, non-finite values, degenerate panels, singular systems.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace drofolio
