#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "coffe/dataset.hpp"

namespace coffe::cli {

/// Exit codes of `run`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `coffe` tool. `args` excludes the program name.
/// Failures print one line "error: <kind>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `label,dim_0,...,dim_{D-1}` followed by one row per sample.
std::string projection_csv(const EmbeddingDataset& ds);

void export_proj(const std::filesystem::path& features, const std::filesystem::path& out_csv);

}  // namespace coffe::cli
