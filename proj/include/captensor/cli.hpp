#pragma once

namespace captensor {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitUsage = 2,
  kExitInput = 3,
  kExitContract = 4,
  kExitFit = 5,
  kExitNumerical = 6,
};

// Entry point of the `captensor` tool. Errors are reported on stderr and mapped
// to the exit codes above.
int run_cli(int argc, char** argv);

}  // namespace captensor
