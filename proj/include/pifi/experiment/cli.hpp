#pragma once

#include <ostream>

namespace pifi::experiment {

// Entry point of the `pifi` tool. Results go to `out`, progress and errors
// to `err`. Exit codes: 0 success, 1 usage or configuration error, 2 runtime
// failure (including a failed gradcheck).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pifi::experiment
