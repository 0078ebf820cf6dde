#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "oed/metrics.hpp"
#include "oed/run_config.hpp"

namespace oed::cli {

/// Invalid configuration or inputs detected before any output is written (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Fresh `<out_dir>/<command>-<UTC time>[-k]` path that does not exist yet.
std::filesystem::path next_run_dir(const std::filesystem::path& out_dir, const std::string& command);

/// Each command validates first, then writes into a new run directory and returns it.
/// Progress goes to `log`.
std::filesystem::path cmd_synth(const RunConfig& config, std::ostream& log);
std::filesystem::path cmd_train_seg(const RunConfig& config, std::ostream& log);
std::filesystem::path cmd_train_mil(const RunConfig& config, std::ostream& log);
std::filesystem::path cmd_eval(const RunConfig& config, std::ostream& log);
std::filesystem::path cmd_infer(const RunConfig& config, std::ostream& log);
/// Blocks while serving.
void cmd_serve(const RunConfig& config, std::ostream& log);

/// The metric suite behind cmd_eval, without writing anything.
metrics::EvalReport evaluate(const RunConfig& config, std::ostream& log);

/// Table row label for a segmentation model configuration.
std::string model_name(const seg::SegModelConfig& config);

/// Command-line entry point: `oed <synth|train-seg|train-mil|eval|infer|serve> ...`.
/// Prints the run directory on `out`; returns 0, 1 (runtime failure) or 2 (usage).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace oed::cli
