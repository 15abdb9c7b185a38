#pragma once

#include <string>
#include <vector>

namespace attnseg {

// attnseg {train|eval|infer|explain|gradcheck|params}
//   --config <path> --out <dir> [--seed <u64>] [--set k=v ...]
//   [--ckpt <path>] [--image <path>]
// Returns the process exit code; diagnostics go to stderr as "ERROR: ...".
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

} // namespace attnseg
