#pragma once

#include <iosfwd>

namespace smad::cli {

/// Runs one `smad` invocation. The run directory is printed to `out`,
/// diagnostics go to `err`. Returns the process exit code: 0 success,
/// 2 config/validation, 3 I/O, 4 numeric/infeasible.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smad::cli
