#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ddt/train.hpp"

namespace ddt::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

/// Bad flags or values; exit code 2.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Unreadable or inconsistent input artifact; exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Hex SHA-1 of "blob <size>\0<bytes>", as git hashes file contents.
std::string git_blob_sha1(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);

struct RunManifest {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, checksum
    std::vector<std::string> outputs;
    KeyValues settings;

    void add_input(const std::filesystem::path& path, const std::string& bytes);
    std::string to_text() const;
};

struct TrainArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::filesystem::path out_dir;
    std::string resume;
};

struct SampleArgs {
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::size_t steps = 50;
    double shift = 1.0;
    std::string solver = "euler";
    double cfg_w = 1.0;
    std::vector<double> cfg_interval{0.0, 1.0};
    std::string plan;
    std::optional<double> share_ratio;
    std::string strategy = "dp";
    std::string similarity;
    std::size_t samples = 64;
    std::size_t probe_samples = 32;
    std::filesystem::path out_dir;
    bool trajectory = false;
};

struct PlanArgs {
    std::string similarity;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::size_t steps = 50;
    double shift = 1.0;
    std::string solver = "euler";
    std::optional<std::size_t> k;
    std::optional<double> share_ratio;
    std::string strategy = "dp";
    std::size_t probe_samples = 32;
    std::filesystem::path out;
    std::string similarity_out;
};

struct DiagnoseArgs {
    std::string checkpoint;
    std::string dataset;
    std::uint64_t seed = 0;
    std::vector<double> t_list{0.1, 0.3, 0.5, 0.7, 0.9};
    std::size_t images = 64;
    std::size_t draws = 102400;
    std::size_t steps = 50;
    double shift = 1.0;
    std::string solver = "euler";
    std::size_t probe_samples = 32;
    std::filesystem::path out_dir;
};

/// Each command writes its artifacts plus manifest.txt and returns an exit code.
int cmd_train(const TrainArgs& args, std::ostream& log);
int cmd_sample(const SampleArgs& args, std::ostream& log);
int cmd_plan(const PlanArgs& args, std::ostream& log);
int cmd_diagnose(const DiagnoseArgs& args, std::ostream& log);

/// Full command line, errors mapped to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ddt::cli
