#pragma once

#include <cstdint>
#include <iosfwd>

namespace lpdesc {

/// Fast invariant suite behind `lpdesc selfcheck`. Prints one line per
/// check and returns true when all pass.
bool run_selfcheck(std::uint64_t seed, std::ostream& out);

}  // namespace lpdesc
