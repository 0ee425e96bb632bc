#ifndef MORPHFIT_CLI_HPP_
#define MORPHFIT_CLI_HPP_

#include <string>
#include <vector>

namespace morphfit {

/// Runs one CLI command and returns the process exit code:
/// 0 success, 2 configuration/usage error, 3 data integrity error,
/// 4 numeric failure, 1 anything else.
int dispatch(const std::vector<std::string>& args);

}  // namespace morphfit

#endif  // MORPHFIT_CLI_HPP_
