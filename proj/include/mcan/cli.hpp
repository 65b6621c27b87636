#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcan/model.hpp"
#include "mcan/train.hpp"

namespace mcan {

// Everything a run needs; optionals stay unset unless given on the command
// line so profile defaults and checkpoint values can fill them in.
struct RunConfig {
    std::string command;  // train | eval | inspect | ablate
    std::string train_path, dev_path, test_path, pairs_path;
    std::string embeddings_path, checkpoint_path;
    std::string profile = "custom";  // trecqa | udc | cqa | tweets | custom
    std::string out_dir = ".";
    std::uint64_t seed = 0;

    std::optional<std::size_t> batch_size, epochs, patience;
    std::optional<std::size_t> hidden, head, fm_k, max_len, embed_dim, encoder_width;
    std::optional<double> lr, dropout, l2;
    std::optional<std::string> compression, affinity, dev_metric;
    std::vector<std::string> disable_casts;
    bool no_highway = false;
    bool no_lstm = false;
};

// Profile defaults merged with command-line overrides.
struct ResolvedRun {
    ModelConfig model;
    TrainConfig train;
    std::string dev_metric = "map";
};

ResolvedRun resolve_run(const RunConfig& config);

int cmd_train(const RunConfig& config);
int cmd_eval(const RunConfig& config);
int cmd_inspect(const RunConfig& config);
int cmd_ablate(const RunConfig& config);

// Dispatches on config.command; throws UsageError / DataError / NumericError.
int run_command(const RunConfig& config);

// Full entry point: parses argv, runs, maps errors to exit codes
// (0 ok, 1 usage, 2 data, 3 numeric failure).
int cli_main(int argc, char** argv);

}  // namespace mcan
