#pragma once

#include <iosfwd>

namespace cdt {

// Full command-line surface, callable in-process for tests. Returns the
// process exit status: 0 ok, 1 I/O failure, 2 usage/config error, 3 numeric
// failure. Diagnostics go to `err`, normal output to `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace cdt
