#pragma once

// Subcommands synth, train, eval and inspect. Every configuration key is also
// a flag (meta_period becomes --meta-period); flags override a --config file,
// which overrides the defaults. Each command echoes its resolved keys into its
// output directory.

#include <ostream>
#include <string>
#include <vector>

namespace datamanip {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace datamanip
