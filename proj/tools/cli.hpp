#pragma once

#include <iosfwd>

namespace qacal {

// Exit codes: 0 success, 1 validation error (bad flags or inputs), 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qacal
