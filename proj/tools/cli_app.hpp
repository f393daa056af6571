#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "fineprint/config.hpp"
#include "fineprint/model_backend.hpp"

namespace fineprint::cli {

// Runs one command line (without the program name). Returns the exit code:
// 0 success, 1 user or data error, 2 backend error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::unique_ptr<ModelBackend> make_backend(const BackendSettings& settings);

}  // namespace fineprint::cli
