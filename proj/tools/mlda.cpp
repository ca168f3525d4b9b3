#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mlda/harness/config.hpp"
#include "mlda/harness/experiments.hpp"
#include "mlda/harness/parallel.hpp"
#include "mlda/harness/report.hpp"

using namespace mlda;
using namespace mlda::harness;

namespace {

void print_report(const ExperimentReport& rep) {
    for (const auto& c : rep.criteria) {
        std::cout << "[" << rep.id << "] criterion " << c.number << " (" << c.name << "): "
                  << (c.pass ? "PASS" : "FAIL") << "  " << c.detail << "\n";
        for (const auto& o : c.offending) std::cout << "    - " << o << "\n";
    }
    std::cout << "[" << rep.id << "] " << format_double(rep.wall_time_s) << " s\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilabel discriminant analysis experiments"};
    std::string experiment;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> trials;
    std::optional<int> threads;
    std::vector<std::string> choices = experiment_ids();
    choices.push_back("all");
    app.add_option("experiment", experiment, "Experiment to run")->required()->check(CLI::IsMember(choices));
    app.add_option("--config", config_path, "JSON configuration file")->required();
    app.add_option("--seed", seed, "Base seed");
    app.add_option("--out", out, "Output directory");
    app.add_option("--trials", trials, "Override the repetition count")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "Worker threads (default: MLDA_THREADS or hardware)")
        ->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    HarnessConfig hc;
    try {
        hc = load_config(config_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    Context ctx;
    ctx.seed = seed.value_or(hc.run.seed);
    ctx.threads = resolve_threads(threads.value_or(hc.run.threads));
    ctx.max_cells = hc.run.max_cells;
    const std::string out_dir = out.value_or(hc.run.out);

    const std::vector<std::string> ids = experiment == "all" ? experiment_ids() : std::vector<std::string>{experiment};
    bool all_pass = true;
    bool errored = false;
    for (const auto& id : ids) {
        json cfg;
        try {
            cfg = hc.experiment(id);
            if (trials) override_trials(cfg, *trials);
            json effective = {{"experiment", id}, {"seed", ctx.seed}, {"max_cells", ctx.max_cells}, {"params", cfg}};
            const ExperimentReport rep = run_experiment(id, cfg, ctx);
            write_outputs(out_dir, rep, effective);
            print_report(rep);
            all_pass = all_pass && rep.all_pass();
        } catch (const Error& e) {
            std::cerr << "error in " << id << " [" << to_string(e.code()) << "]: " << e.what() << "\n";
            errored = true;
        } catch (const std::exception& e) {
            std::cerr << "error in " << id << ": " << e.what() << "\n";
            errored = true;
        }
    }
    if (errored) return 2;
    return all_pass ? 0 : 1;
}
