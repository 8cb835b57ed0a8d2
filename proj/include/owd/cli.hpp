#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace owd::cli {

inline constexpr const char* kToolName = "owdet";
inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the `owdet` executable. Exit codes: 0 success, 1 usage or
/// validation error, 2 failed numerical check.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

/// Expands directories to the `*.manifest` files they contain, sorted by name.
std::vector<std::filesystem::path> expand_manifests(const std::vector<std::string>& inputs);

} // namespace owd::cli
