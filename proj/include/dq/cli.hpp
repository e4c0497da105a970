#pragma once

// Subcommand implementations behind tools/dq. Each returns a process exit
// code and never throws.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dq {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitPartial = 4 };

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
  std::vector<std::string> overrides;  // extra key=value pairs applied after the file
};

struct AttackOptions {
  std::filesystem::path checkpoint;
  std::optional<std::string> attack;
  std::optional<double> eps;
  std::optional<double> alpha;
  std::optional<int> iters;
  std::optional<std::filesystem::path> export_path;
};

struct AnalyzeOptions {
  std::filesystem::path checkpoint;
  std::vector<double> eps;  // empty: analyze.eps from the config
};

struct SweepOptionsCli {
  bool resume = false;
};

int cmd_train(const GlobalOptions& g, std::ostream& log);
int cmd_attack(const GlobalOptions& g, const AttackOptions& a, std::ostream& log);
int cmd_analyze(const GlobalOptions& g, const AnalyzeOptions& a, std::ostream& log);
int cmd_sweep(const GlobalOptions& g, const SweepOptionsCli& s, std::ostream& log);

// Large allocator thresholds so per-batch buffers are reused instead of
// being returned to the kernel after every op.
void tune_allocator();

}  // namespace dq
