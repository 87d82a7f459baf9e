// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace vqpl::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Parses argv and runs one subcommand. Normal output goes to out,
/// diagnostics to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vqpl::cli
