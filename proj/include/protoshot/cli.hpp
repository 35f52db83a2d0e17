#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "protoshot/config.hpp"

namespace protoshot::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Each command writes effective_config.json into config.out and reports
/// progress on out. Errors propagate as ConfigError, DataError or
/// NumericalError.
void cmd_prepare(const RunConfig& config, std::ostream& out, std::ostream& err);
void cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
/// checkpoint defaults to <out>/model.ckpt when empty.
void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& out,
              std::ostream& err);
void cmd_explain(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& out,
                 std::ostream& err);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace protoshot::cli
