#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mlda/harness/experiments.hpp"

using namespace mlda;
using namespace mlda::harness;

TEST(Aggregate, SingleTrial) {
    const Summary s = aggregate(std::vector<double>{0.37});
    EXPECT_EQ(s.median, 0.37);
    EXPECT_EQ(s.p95, 0.37);
    EXPECT_EQ(s.mean, 0.37);
    EXPECT_EQ(s.se, 0.0);
    EXPECT_EQ(s.count, 1u);
}

TEST(Aggregate, NearestRankPercentile) {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    EXPECT_EQ(nearest_rank(v, 95.0), 95.0);
    EXPECT_EQ(nearest_rank(v, 100.0), 100.0);
    EXPECT_EQ(nearest_rank(v, 0.5), 1.0);
    EXPECT_EQ(nearest_rank({1.0, 2.0, 3.0}, 50.0), 2.0);
    const Summary s = aggregate(v);
    EXPECT_EQ(s.p95, 95.0);
    EXPECT_EQ(s.median, 50.5);
    EXPECT_DOUBLE_EQ(s.mean, 50.5);
    EXPECT_NEAR(s.se, std::sqrt(100.0 * 101.0 / 12.0 / 100.0), 1e-12);
    EXPECT_THROW(nearest_rank({}, 50.0), Error);
    EXPECT_THROW(aggregate(std::vector<double>{}), Error);
}

TEST(Aggregate, IndependentOfInputOrder) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    std::vector<std::pair<std::size_t, double>> trials;
    for (std::size_t i = 0; i < 257; ++i) trials.emplace_back(i, g(rng));
    const Summary a = aggregate(trials);
    for (int rep = 0; rep < 20; ++rep) {
        std::shuffle(trials.begin(), trials.end(), rng);
        const Summary b = aggregate(trials);
        EXPECT_EQ(a.median, b.median);
        EXPECT_EQ(a.p95, b.p95);
        EXPECT_EQ(a.mean, b.mean);
        EXPECT_EQ(a.se, b.se);
    }
}

TEST(SlopeFit, PowerLaws) {
    const std::vector<double> n = {50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000};
    std::vector<double> e, c;
    for (double x : n) {
        e.push_back(3.0 / std::sqrt(x));
        c.push_back(0.2);
    }
    EXPECT_NEAR(slope_fit(n, e), -0.5, 1e-10);
    EXPECT_NEAR(slope_fit(n, c), 0.0, 1e-12);
    EXPECT_THROW(slope_fit({1, 2}, {1, 2}), Error);
    EXPECT_THROW(slope_fit({1, 2, 3}, {1, 0, 2}), Error);
    EXPECT_THROW(slope_fit({1, 2, 3}, {1, 2}), Error);
}

TEST(SlopeFit, PublishedMedians) {
    const std::vector<double> n = {50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000};
    const std::vector<double> med = {0.160, 0.115, 0.106, 0.072, 0.051, 0.051, 0.041, 0.033, 0.029};
    const double s = slope_fit(n, med);
    EXPECT_GE(s, -0.35);
    EXPECT_LE(s, -0.20);
}

TEST(Csv, HeaderAndSixSignificantDigits) {
    Table t;
    t.columns = {"n", "Median sin", "note"};
    t.rows.push_back({Cell{50LL}, Cell{0.123456789}, Cell{std::string("a,b")}});
    t.rows.push_back({Cell{20000LL}, Cell{1234567.0}, Cell{std::string("plain")}});
    t.rows.push_back({Cell{1LL}, Cell{std::numeric_limits<double>::infinity()}, Cell{std::string("x\"y")}});
    EXPECT_EQ(to_csv(t), "n,Median sin,note\n50,0.123457,\"a,b\"\n20000,1.23457e+06,plain\n1,inf,\"x\"\"y\"\n");
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(-2.5e-9), "-2.5e-09");
    EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Summary, HashTracksConfigContent) {
    const json a = {{"experiment", "rank"}, {"seed", 1}, {"params", {{"n", 100}}}};
    json b = a;
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b["params"]["n"] = 101;
    EXPECT_NE(config_hash(a), config_hash(b));

    ExperimentReport rep;
    rep.id = "rank";
    rep.criteria.push_back({1, "rank table", true, "ok", {}});
    rep.criteria.push_back({2, "identities", false, "bad", {"row 3"}});
    const json s = summary_json(rep, a);
    EXPECT_EQ(s.at("config_hash"), config_hash(a));
    EXPECT_EQ(s.at("passes").at("criterion_1"), true);
    EXPECT_EQ(s.at("passes").at("criterion_2"), false);
    EXPECT_EQ(s.at("all_pass"), false);
    EXPECT_EQ(s.at("criteria").at(1).at("offending").at(0), "row 3");
}

TEST(Config, ParseAndMerge) {
    const HarnessConfig c = parse_config(json::parse(R"({"seed": 7, "threads": 3, "out": "o",
        "experiments": {"divergence": {"trials": 5}}})"));
    EXPECT_EQ(c.run.seed, 7u);
    EXPECT_EQ(c.run.threads, 3);
    EXPECT_EQ(c.run.out, "o");
    const json d = c.experiment("divergence");
    EXPECT_EQ(d.at("trials"), 5);
    EXPECT_EQ(d.at("n"), 200);
    EXPECT_EQ(c.experiment("rank"), default_experiment_config("rank"));
}

TEST(Config, Errors) {
    auto code_of = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InternalCheck;
    };
    EXPECT_EQ(code_of([] { parse_config(json::array()); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse_config(json{{"experiments", {{"bogus", json::object()}}}}); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse_config(json{{"seed", "x"}}); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { load_config("/nonexistent/cfg.json"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse_scheme(json{{"kind", "weird"}}, 4); }), ErrorCode::ConfigError);

    const auto path = std::filesystem::temp_directory_path() / "mlda_bad_config.json";
    std::ofstream(path) << "{ not json";
    EXPECT_EQ(code_of([&] { load_config(path.string()); }), ErrorCode::ConfigError);
    std::filesystem::remove(path);
}

TEST(Config, InfeasibleDimensionsRejectedBeforeTrials) {
    const Context ctx;
    for (const char* id : {"divergence", "distance", "concentration", "interaction", "regularization", "factors"}) {
        json cfg = default_experiment_config(id);
        cfg["r"] = 1000;
        try {
            run_experiment(id, cfg, ctx);
            ADD_FAILURE() << id << " accepted r > d";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ConfigError) << id;
        }
    }
}

TEST(Threads, ResolutionOrder) {
    EXPECT_EQ(resolve_threads(3), 3);
    setenv("MLDA_THREADS", "5", 1);
    EXPECT_EQ(resolve_threads(0), 5);
    setenv("MLDA_THREADS", "junk", 1);
    EXPECT_GE(resolve_threads(0), 1);
    unsetenv("MLDA_THREADS");
}

TEST(Threads, ParallelForRethrowsLowestIndex) {
    std::vector<int> out(50, 0);
    parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    try {
        parallel_for(20, 4, [](std::size_t i) {
            if (i == 7 || i == 13) throw Error(ErrorCode::InvalidInput, "at " + std::to_string(i));
        });
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("at 7"), std::string::npos);
    }
}

namespace {

json small_config(const std::string& id) {
    json cfg = default_experiment_config(id);
    if (id == "divergence") {
        cfg["trials"] = 3;
        cfg["equivalence"]["instances"] = 3;
        cfg["equivalence"]["probes"] = 50;
    } else if (id == "distance") {
        cfg["pairs"] = 20;
        cfg["draws"] = 10;
        cfg["residual"]["instances"] = 10;
    } else if (id == "convergence") {
        cfg["trials"] = 4;
        cfg["n_grid"] = {50, 100, 200};
    } else if (id == "factors") {
        cfg["trials"] = 4;
        cfg["n"] = 300;
        cfg["kappa_trials"] = 4;
    } else if (id == "concentration") {
        cfg["pairs"] = 3;
        cfg["draws"] = 500;
        cfg["diagnostic_draws"] = 1000;
    } else if (id == "interaction") {
        cfg["pairs"] = 20;
    } else if (id == "regularization") {
        cfg["trials"] = 3;
    }
    return cfg;
}

} // namespace

TEST(Determinism, CsvByteIdenticalAcrossThreadCounts) {
    for (const auto& id : experiment_ids()) {
        const json cfg = small_config(id);
        Context one{123, 1}, many{123, 4};
        const std::string a = to_csv(run_experiment(id, cfg, one).table);
        const std::string b = to_csv(run_experiment(id, cfg, many).table);
        const std::string c = to_csv(run_experiment(id, cfg, many).table);
        EXPECT_EQ(a, b) << id;
        EXPECT_EQ(b, c) << id;
        EXPECT_NE(a.find('\n'), std::string::npos) << id;
    }
}

TEST(Determinism, SeedChangesResults) {
    const json cfg = small_config("divergence");
    const std::string a = to_csv(run_experiment("divergence", cfg, Context{1, 1}).table);
    const std::string b = to_csv(run_experiment("divergence", cfg, Context{2, 1}).table);
    EXPECT_NE(a, b);
}

TEST(Outputs, WrittenWithCriteriaEvenOnFailure) {
    const auto dir = std::filesystem::temp_directory_path() / "mlda_outputs_test";
    std::filesystem::remove_all(dir);
    const json cfg = small_config("convergence");
    const ExperimentReport rep = run_experiment("convergence", cfg, Context{5, 1});
    write_outputs(dir, rep, cfg);
    std::ifstream csv(dir / "convergence.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, [&] {
        std::string h;
        for (size_t j = 0; j < rep.table.columns.size(); ++j) h += (j ? "," : "") + csv_escape(rep.table.columns[j]);
        return h;
    }());
    std::ifstream js(dir / "convergence.summary.json");
    const json s = json::parse(js);
    EXPECT_EQ(s.at("criteria").size(), rep.criteria.size());
    EXPECT_EQ(s.at("config_hash"), config_hash(cfg));
    std::filesystem::remove_all(dir);
}

TEST(Overrides, TrialsMapsToRepetitionKey) {
    json a = default_experiment_config("divergence");
    override_trials(a, 9);
    EXPECT_EQ(a.at("trials"), 9);
    json b = default_experiment_config("concentration");
    override_trials(b, 9);
    EXPECT_EQ(b.at("pairs"), 9);
}

TEST(Experiments, EveryCriterionNumbered) {
    std::vector<int> seen;
    for (const auto& id : experiment_ids())
        for (const auto& c : run_experiment(id, small_config(id), Context{11, 1}).criteria) seen.push_back(c.number);
    std::sort(seen.begin(), seen.end());
    std::vector<int> expect(11);
    std::iota(expect.begin(), expect.end(), 1);
    EXPECT_EQ(seen, expect);
}
