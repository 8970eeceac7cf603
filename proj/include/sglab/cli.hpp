#pragma once

#include <ostream>

namespace sg {

// Entry point of the sglab tool. Returns 0 on success, 2 for usage and
// configuration errors, 1 for runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sg
