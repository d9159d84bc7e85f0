#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prosoclap::cli {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

// args[0] is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prosoclap::cli
