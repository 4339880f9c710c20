#pragma once

#include "fedgen/dataset.hpp"
#include "fedgen/federation.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedgen {

struct DataSource {
    std::string bundle;          ///< path to an FCIL bundle; empty selects synthetic data
    int synth_classes = 10;
    int synth_per_class = 120;
    ImageShape synth_shape{1, 16, 16};
    double test_fraction = 0.2;
};

struct RunConfig {
    std::string profile = "paper";
    DataSource data;
    int num_tasks = 5;
    int num_clients = 10;
    double beta = 0.5;
    bool iid = false;
    FederationConfig federation;
    std::uint64_t seed = 0;
    std::string output = "runs/latest";
    bool plots = true;
};

/// Full-scale defaults from the method's reference setup.
RunConfig paper_profile();
/// Small CPU-friendly setup: 16x16 synthetic data, N=4, R=10, short diffusion.
RunConfig desk_profile();
RunConfig profile_by_name(const std::string& name);

/// Sets one `section.key` entry. Throws ConfigError naming the key on a bad value.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// Applies every entry of an INI file on top of `base`. A `run.profile` entry
/// first swaps the base for that profile unless `allow_profile_switch` is false.
RunConfig load_config(const std::filesystem::path& path, RunConfig base, bool allow_profile_switch = true);
/// Every setting as an INI document; loading it reproduces the config.
std::string config_to_ini(const RunConfig& config);
/// Names of all recognised `section.key` entries, in snapshot order.
std::vector<std::string> config_keys();

/// Field-level validation; the message lists every offending key.
void validate(const RunConfig& config);

/// Sub-seeds derived from the master seed.
struct RunSeeds {
    std::uint64_t data;
    std::uint64_t partition;
    std::uint64_t class_order;
    std::uint64_t federation;
};
RunSeeds derive_run_seeds(std::uint64_t master);

} // namespace fedgen
