// tempo: synthetic mobility -> spectrograms -> contractive autoencoder -> land-use classification.
#include "tempo/error.hpp"
#include "tempo/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace {

void configure_logging() {
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    if (const char* env = std::getenv("TEMPO_LOG")) {
        spdlog::set_level(spdlog::level::from_str(env));
    }
}

} // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"tempo: temporal embeddings of map tiles from GPS activity"};
    app.require_subcommand(1);

    std::string config_path;
    std::string workdir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool force = false;

    app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--workdir", workdir, "work directory (overrides the config)");
    app.add_option("--seed", seed, "run seed (overrides the config)");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("generate", "write a synthetic scene, trajectories and labels");
    gen->add_flag("--force", force, "overwrite a non-empty work directory");
    app.add_subcommand("embed", "ingest, spectrogram, train the autoencoder and encode tiles");
    app.add_subcommand("classify", "train and evaluate land-use classifiers");
    app.add_subcommand("map", "render the embedding map");
    auto* all = app.add_subcommand("all", "generate, embed, classify and map");
    all->add_flag("--force", force, "overwrite a non-empty work directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        tempo::PipelineConfig cfg;
        if (!config_path.empty()) {
            cfg = tempo::load_config(config_path, cfg);
        }
        if (!workdir.empty()) {
            cfg.workdir = workdir;
        }
        if (seed) {
            cfg.seed = *seed;
        }
        if (threads) {
            cfg.threads = *threads;
        }

        const auto* sub = app.get_subcommands().front();
        const auto name = sub->get_name();
        tempo::CommandResult r;
        if (name == "generate") {
            r = tempo::cmd_generate(cfg, force);
        } else if (name == "embed") {
            r = tempo::cmd_embed(cfg);
        } else if (name == "classify") {
            r = tempo::cmd_classify(cfg);
        } else if (name == "map") {
            r = tempo::cmd_map(cfg);
        } else {
            r = tempo::cmd_all(cfg, force);
        }
        for (const auto& s : r.stages) {
            std::cout << s.name << ": " << (s.executed ? "ran" : "cached") << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return tempo::exit_code_for(e);
    }
}
