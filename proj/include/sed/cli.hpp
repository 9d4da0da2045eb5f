#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sed/run_config.hpp"
#include "sed/sparse_data.hpp"

namespace sed::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kConfigError = 2,
  kDataError = 3,
  kCompatibilityError = 4,
};

/// Runs one command. `args` excludes the program name. Machine-readable
/// output (artifact paths) goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Raw (unscaled) samples named by the config: generated or read from data_path.
std::vector<SparseSample> load_data(const RunConfig& cfg);

/// Generated SED sample as written by `sample`: canonical "s"/"d"/"v" plus
/// the generation-order "gen_d"/"gen_v" and the ordering flag "valid".
struct SampleRecord {
  SparseSample sample;
  std::vector<int> generation_dims;
  bool has_generation_order = false;
};

/// Reads JSON-lines (.jsonl) or dense CSV (any other extension) samples.
std::vector<SampleRecord> read_samples(const std::string& path);

}  // namespace sed::cli
