#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hyperst {

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/**
 * Entry point of the `hyperst` tool. `args` excludes the program name, e.g.
 * {"train", "--config", "exp.json"}. Commands: gen-data, train, eval, compare,
 * verify, grad-check, export-embeddings.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hyperst
