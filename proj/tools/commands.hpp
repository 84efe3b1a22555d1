#pragma once

// Command implementations behind the t1map executable. Each returns the
// process exit code; errors propagate as exceptions to run_cli.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "t1map/metrics.hpp"
#include "t1map/mocor.hpp"

namespace t1map::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumeric = 1;
inline constexpr int kExitUsage = 2;

/// Options shared by the commands that write a metrics row.
struct SummaryOptions {
  std::string case_id;   // defaults to the series directory name
  double ref_angle = 0.0; // degrees
  AhaRing ring = AhaRing::Basal;
};

struct FitCommand {
  std::filesystem::path series;
  std::filesystem::path out;
  std::optional<std::filesystem::path> mask;
  SummaryOptions summary;
  int jobs = 1;
  bool record_timing = false;
};

struct MocorCommand {
  std::filesystem::path series;
  std::filesystem::path out;
  MocorConfig config;
  std::optional<std::filesystem::path> config_file; // recorded in the run manifest
  SummaryOptions summary;
  int jobs = 1;
  bool record_timing = false;
};

struct PhantomCommand {
  std::optional<std::filesystem::path> spec;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

struct EvalCommand {
  std::filesystem::path truth;
  std::filesystem::path result;
  std::filesystem::path out;
  SummaryOptions summary;
};

struct IccCommand {
  std::filesystem::path test;
  std::filesystem::path retest;
  std::filesystem::path out;
};

int cmd_fit(const FitCommand &c);
int cmd_mocor(const MocorCommand &c);
int cmd_phantom(const PhantomCommand &c);
int cmd_eval(const EvalCommand &c);
int cmd_icc(const IccCommand &c);

/// Parses argv, dispatches, and maps exceptions to exit codes.
int run_cli(int argc, char **argv);

} // namespace t1map::cli
