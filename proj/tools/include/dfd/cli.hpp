#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dfd/data.hpp"
#include "dfd/metrics.hpp"
#include "dfd/models.hpp"
#include "dfd/optim.hpp"

namespace dfd::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // runtime failure: unreadable data, all predictions failed
  kUsage = 2,       // bad arguments, config, or input CSV
  kDiverged = 3,    // non-finite training loss
  kCheckpoint = 4,  // unreadable or mismatched checkpoint
};

/// Parses `key = value` lines; `#` starts a comment. Later keys win.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Sub-seeds expanded from the single --seed.
struct Seeds {
  std::uint64_t split, init, shuffle, augment, dropout;
  static Seeds from(std::uint64_t seed);
};

struct RunConfig {
  ModelConfig model;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  AdamConfig adam;
  AugmentPolicy augment;
  std::uint64_t seed = 1;
  bool record_time = false;

  /// Throws std::invalid_argument on an unknown key or bad value. Model keys
  /// (see ModelConfig::is_key) go to `model`; `model` and `scale` reset it to
  /// the defaults of that kind and scale.
  void apply(const std::map<std::string, std::string>& values);
  void validate() const;
};

/// Runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// `path, verdict, p_fake%, p_real%` with two decimals.
std::string format_prediction(const std::string& path, double p_fake);

/// Line plot of one or more series against epoch, no timestamps.
struct Series {
  std::string label;
  std::vector<double> values;
};
std::string render_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series);

}  // namespace dfd::cli
