#pragma once

namespace mfsr {

// Parses argv and runs one subcommand. Returns the process exit code:
// 0 success, 1 usage/config error, 2 data/file-format error, 3 numerical
// failure during simulation, training, or evaluation.
int cli_dispatch(int argc, const char* const* argv);

}  // namespace mfsr
