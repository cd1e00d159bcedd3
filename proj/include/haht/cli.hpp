#pragma once

#include <string>
#include <vector>

namespace haht {

// Routes argv (without the program name) to a subcommand. Returns 0 on
// success, 1 on usage errors, 2 on runtime errors.
int dispatch(const std::vector<std::string>& args);

}  // namespace haht
