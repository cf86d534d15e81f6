#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "prunekit.h"

namespace {

int run_command(const std::string& command, const std::string& config_path,
                const uint64_t* seed, const std::string& out_dir, bool force) {
    pk_experiment* exp = nullptr;
    pk_status st = pk_experiment_create_from_file(config_path.c_str(), &exp);
    if (st != PK_OK) {
        std::fprintf(stderr, "error: %s\n", pk_last_error());
        return static_cast<int>(st);
    }
    if (seed) pk_experiment_set_seed(exp, *seed);
    if (!out_dir.empty()) pk_experiment_set_output_dir(exp, out_dir.c_str());
    pk_experiment_set_force(exp, force ? 1 : 0);

    st = pk_experiment_run(exp, command.c_str());
    if (st != PK_OK) std::fprintf(stderr, "error: %s\n", pk_last_error());
    pk_experiment_destroy(exp);
    return static_cast<int>(st);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prunekit: structured pruning of small CNNs with saliency criteria"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;

    const char* commands[] = {"train", "oracle", "correlate", "prune", "baseline-reg"};
    const char* descriptions[] = {
        "train a model from scratch and save it",
        "exhaustive single-map ablation oracle",
        "rank-correlate saliency criteria against the oracle",
        "iterative pruning with interleaved fine-tuning",
        "map-wise regularization baseline sweep",
    };

    for (size_t i = 0; i < 5; ++i) {
        CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
        sub->add_option("--config", config_path, "experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&seed_set](const std::string&) { seed_set = true; });
        sub->add_option("--out", out_dir, "override the config output directory");
        sub->add_flag("--force", force, "allow a non-empty output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : static_cast<int>(PK_ERR_CONFIG);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    return run_command(command, config_path, seed_set ? &seed : nullptr, out_dir, force);
}
