#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "odsurv/common/error.hpp"

namespace odsurv::app {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitStage = 3 };

int exit_code_for(ErrorKind kind);

// Subcommands: ingest, split, train, evaluate, predict, explain, report,
// llm-eval. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace odsurv::app
