#ifndef UAP_CLI_COMMANDS_H_
#define UAP_CLI_COMMANDS_H_

#include <cstdint>
#include <filesystem>
#include <string>

#include "cli/config.h"

namespace uap::cli {

struct RunContext {
  std::string command;
  Config config;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

void CmdSynthData(const RunContext& ctx);
void CmdTrain(const RunContext& ctx);
void CmdAttackFs(const RunContext& ctx);
void CmdAttackPs(const RunContext& ctx);
void CmdDefend(const RunContext& ctx);
void CmdTransfer(const RunContext& ctx);
void CmdEvaluate(const RunContext& ctx);
void CmdReport(const RunContext& ctx);

// Parses arguments, runs one subcommand, and returns the process exit code.
// Failures print one JSON object on stderr: {"error": <code>, "message": ...}.
int Main(int argc, char** argv);

}  // namespace uap::cli

#endif  // UAP_CLI_COMMANDS_H_
