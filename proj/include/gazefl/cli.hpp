#pragma once

#include <iosfwd>

namespace gazefl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// gazefl synth|train|eval|robustness|stats [options]
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gazefl
