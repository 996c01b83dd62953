#pragma once

// Operator surface: JSON run configuration with strict validation, the gen /
// train / eval / probe / ingest / print-config subcommands, and run manifest
// emission. run_cli is the process entry point minus main().

#include <optional>
#include <string>
#include <vector>

#include "rlt4rec/model.hpp"
#include "rlt4rec/simenv.hpp"

namespace rlt4rec {

struct DatasetSpec {
    std::string kind = "pd1";  // pd1 | pd2 | group_model_file | triples_file
    // pd1/pd2 knobs
    int n_groups = 0;          // 0: dataset default
    int block = 25;
    double sigma = 0.0;        // 0: dataset default
    // file-backed datasets
    std::string group_model_file;
    std::string triples_file;
    int triples_n_groups = 8;
};

struct OfflineDataSpec {
    int users_per_group = 0;  // 0: 5000 sequences total across groups
    int seq_len = 50;
};

struct EvalSpec {
    std::vector<std::string> policies = {"rlt4rec"};
    int horizon = 25;
    int users_per_group = 200;
    std::vector<int> k_list = {1, 5, 10, 15, 20};
    double target_rating = 0.0;  // 0: dataset rating_max
    bool target_sweep = false;   // one curve per integer target 1..rating_max
    int mcts_budget = 2000;
    int mcts_horizon = 10;
    double mcts_c_ucb = 1.4142135623730951;
    std::string checkpoint;           // rlt4rec policy
    std::string ablation_checkpoint;  // rlt4rec_no_bottleneck policy
};

struct ProbeSpec {
    int users_per_group = 200;
    int horizon = 5;
    int hidden = 64;
    int epochs = 100;
    double lr = 1e-3;
    double eval_fraction = 0.2;
};

struct RunConfig {
    DatasetSpec dataset;
    HyperParams model;
    OfflineDataSpec offline_data;
    EvalSpec evaluation;
    ProbeSpec probe;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    int workers = 0;

    // Canonical JSON (defaults baked in); also the fingerprint source.
    std::string to_json() const;
    std::string fingerprint() const;
};

// Parses and strictly validates a config JSON: unknown keys are rejected and
// referenced files must exist.
RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text, const std::string& origin);

// Builds the group model named by the dataset spec (constructing or loading).
GroupModel resolve_dataset(const DatasetSpec& spec, std::uint64_t seed);
std::string dataset_label(const DatasetSpec& spec);

// Exit status: 0 success, 1 runtime failure, 2 usage/config error.
int run_cli(const std::vector<std::string>& args);

}  // namespace rlt4rec
