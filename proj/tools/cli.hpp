#pragma once

#include <ostream>

namespace weedsense::cli {

/// Runs one subcommand. Returns 0 on success, 2 on a usage error and 1 on any
/// other failure; failures print one line "error: <category>: <message>".
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace weedsense::cli
