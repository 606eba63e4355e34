#pragma once

namespace pauc::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kNumericalError = 3,
};

/// Name of the environment variable holding the log level
/// (trace, debug, info, warn, error, off).
inline constexpr const char* kLogLevelEnv = "PAUC_LOG_LEVEL";

/// Entry point of the `paucmetric` tool. Subcommands: synth, prep, train,
/// score, calibrate, evaluate.
int run(int argc, char** argv);

}  // namespace pauc::cli
