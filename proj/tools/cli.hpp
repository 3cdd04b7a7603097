#pragma once

#include <iostream>

namespace deformsplat {

/// Entry point of the `deformsplat` tool. Returns 0 on success, 1 on a
/// runtime failure and 2 on a usage or config error.
int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout,
            std::ostream &err = std::cerr);

} // namespace deformsplat
