#include <iostream>

#include "CLI11.hpp"
#include "sotlab/cli.hpp"

namespace cli = sotlab::cli;

int main(int argc, char** argv) {
    CLI::App app{"sotlab: stochastic optimal transport lab"};
    app.require_subcommand(1);

    std::string config, suite_dir = "configs", out = "out";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool dump = false;

    auto* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("--config", config, "experiment config (JSON)")->required();
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out, "output directory");
    run->add_option("--threads", threads, "worker threads (default SOTLAB_THREADS or hardware)");
    run->add_flag("--dump-paths", dump, "write raw bridge paths as flat binary");

    auto* all = app.add_subcommand("verify-all", "run every config listed in <suite>/suite.json");
    all->add_option("--suite", suite_dir, "directory holding suite.json");
    all->add_option("--seed", seed, "override every config seed");
    all->add_option("--out", out, "output directory");
    all->add_option("--threads", threads, "worker threads");

    CLI11_PARSE(app, argc, argv);

    cli::RunOptions opt;
    opt.out_dir = out;
    opt.seed = seed;
    opt.threads = threads;
    opt.dump_paths = dump;
    try {
        if (*run) {
            auto m = cli::run_file(config, opt);
            for (const auto& c : m.checks)
                std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : "  [" + c.detail + "]")
                          << "\n";
            if (!m.error.empty()) std::cout << "error: " << m.error << "\n";
            std::cout << m.name << ": " << m.status << " (" << m.wall_time << " s)\n";
            return m.exit_code;
        }
        return cli::verify_all(suite_dir, opt).exit_code;
    } catch (const sotlab::ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cli::kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kNumericalFailure;
    }
}
