#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "subspace_probe/cli.hpp"
#include "support.hpp"

using namespace subspace_probe;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_command(args, {out, err});
    return {code, out.str(), err.str()};
}

// Runs each test in a fresh scratch directory.
class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        old_ = fs::current_path();
        dir_ = fs::temp_directory_path() /
               ("subspace_probe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        fs::current_path(dir_);
    }
    void TearDown() override {
        fs::current_path(old_);
        fs::remove_all(dir_);
    }
    fs::path old_, dir_;
};

std::string slurp(const fs::path& p) { return read_text_file(p); }

const std::vector<std::vector<std::string>> kPipeline{
    {"simulate", "--model", "counting", "--model-seed", "3", "--n", "60", "--examples", "3", "--seed", "1", "--out",
     "fit.rsd"},
    {"decompose", "--dump", "fit.rsd", "--role", "answer", "--method", "ica", "--k", "12", "--seed", "1", "--out",
     "compA.json"},
    {"decompose", "--dump", "fit.rsd", "--role", "separator", "--method", "ica", "--k", "12", "--seed", "1", "--out",
     "compS.json"},
    {"distances", "--separators", "compS.json", "--answers", "compA.json", "--minima", "minima.csv", "--out",
     "grid.csv"},
    {"align", "--dump", "fit.rsd", "--components", "compA.json", "--per-prompt", "pp.csv", "--out", "trace.csv"},
    {"correlate", "--dump", "fit.rsd", "--separators", "compS.json", "--answers", "compA.json", "--out", "pairs.csv"},
    {"simulate", "--model", "counting", "--model-seed", "3", "--n", "120", "--examples", "1", "--seed", "2",
     "--noise-incorrect", "2", "--noise-seed", "4", "--out", "eval.rsd"},
    {"diagnose", "--dump", "eval.rsd", "--components", "compA.json", "--top", "4", "--csv", "r.csv", "--out",
     "diag.json"},
    {"report", "--input", "grid.csv", "--out", "grid.svg"},
    {"report", "--input", "trace.csv", "--out", "trace.svg"},
};

const std::vector<std::string> kOutputs{"fit.rsd",  "compA.json", "compS.json", "grid.csv",  "minima.csv",
                                        "pp.csv",   "trace.csv",  "pairs.csv",  "eval.rsd",  "diag.json",
                                        "r.csv",    "grid.svg",   "trace.svg"};

}  // namespace

TEST_F(Cli, GenPromptsExample) {
    const auto r = run({"gen-prompts", "--task", "country-capital", "--n", "200", "--examples", "5", "--seed", "7",
                        "--pool", (test_support::data_dir() / "country-capital.json").string(), "--out",
                        "prompts.json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp("prompts.json"));
    EXPECT_EQ(j.at("version"), kVersion);
    EXPECT_EQ(j.at("config").at("seed"), "7");
    const auto specs = prompts_from_json(j);
    ASSERT_EQ(specs.size(), 200u);
    EXPECT_EQ(specs[0].examples.size(), 5u);
    EXPECT_EQ(specs[0].task_name, "country-capital");
}

TEST_F(Cli, DataDirectoryFromEnvironment) {
    fs::create_directories("pools");
    write_text_file("pools/antonym.json", R"([{"input":"hot","output":"cold"},{"input":"up","output":"down"}])");
    ::setenv("SUBSPACE_PROBE_DATA", "pools", 1);
    const auto r = run({"gen-prompts", "--task", "antonym", "--n", "3", "--examples", "1", "--out", "p.json"});
    ::unsetenv("SUBSPACE_PROBE_DATA");
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& s : prompts_from_json(nlohmann::json::parse(slurp("p.json"))))
        EXPECT_TRUE(s.test_query == "hot" || s.test_query == "up");
}

TEST_F(Cli, DecomposeExampleWritesComponentSet) {
    ASSERT_EQ(run(kPipeline[0]).code, 0);
    const auto r = run({"decompose", "--dump", "fit.rsd", "--role", "answer", "--method", "ica", "--k", "20", "--seed",
                        "1", "--out", "compA.json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp("compA.json"));
    const auto cs = component_set_from_json(j);
    EXPECT_EQ(cs.method(), Method::ICA);
    EXPECT_EQ(cs.k(), 20u);
    EXPECT_EQ(cs.d(), 64u);
    EXPECT_EQ(j.at("config").at("role"), "answer");
    EXPECT_EQ(j.at("version"), kVersion);
}

TEST_F(Cli, DiagnoseUnlabeledDumpExitsTwo) {
    ASSERT_EQ(run(kPipeline[0]).code, 0);
    ASSERT_EQ(run(kPipeline[1]).code, 0);
    ASSERT_EQ(run({"simulate", "--model", "counting", "--model-seed", "3", "--n", "10", "--no-label", "--out",
                   "eval.rsd"})
                  .code,
              0);
    const auto r = run({"diagnose", "--dump", "eval.rsd", "--components", "compA.json", "--top", "4", "--out",
                        "diag.json"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("MissingLabels"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists("diag.json"));
}

TEST_F(Cli, UsageErrorsExitOne) {
    auto r = run({});
    EXPECT_EQ(r.code, 1);
    r = run({"frobnicate"});
    EXPECT_EQ(r.code, 1);
    r = run({"decompose", "--dump", "x.rsd"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--out"), std::string::npos);
    EXPECT_NE(r.err.find("decompose"), std::string::npos);
    r = run({"decompose", "--dump", "x.rsd", "--method", "pca", "--out", "o.json"});
    EXPECT_EQ(r.code, 1);
    r = run({"simulate", "--threads", "0", "--out", "x.rsd"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"diagnose", "--help"}).code, 0);
}

TEST_F(Cli, DataErrorsExitTwo) {
    EXPECT_EQ(run({"decompose", "--dump", "missing.rsd", "--out", "o.json"}).code, 2);
    write_text_file("bad.rsd", "NOTADUMP");
    const auto r = run({"align", "--dump", "bad.rsd", "--components", "c.json", "--out", "t.csv"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("BadMagic"), std::string::npos);
    ASSERT_EQ(run(kPipeline[0]).code, 0);
    EXPECT_EQ(run({"decompose", "--dump", "fit.rsd", "--role", "colon", "--out", "o.json"}).code, 2);
    EXPECT_EQ(run({"decompose", "--dump", "fit.rsd", "--layers", "3:x", "--out", "o.json"}).code, 2);
    EXPECT_EQ(run({"gen-prompts", "--task", "no-such-task", "--out", "p.json"}).code, 2);
}

TEST_F(Cli, PipelineRerunIsByteIdentical) {
    std::map<std::string, std::string> first;
    for (const auto& args : kPipeline) {
        const auto r = run(args);
        ASSERT_EQ(r.code, 0) << args[0] << ": " << r.err;
    }
    for (const auto& f : kOutputs) first[f] = slurp(f);
    fs::create_directories("again");
    fs::current_path("again");
    for (auto args : kPipeline) {
        args.push_back("--threads");
        args.push_back("3");
        ASSERT_EQ(run(args).code, 0) << args[0];
    }
    for (const auto& f : kOutputs) EXPECT_EQ(slurp(f), first[f]) << f;
}

TEST_F(Cli, OutputsEmbedVersionAndConfig) {
    for (const auto& args : kPipeline) ASSERT_EQ(run(args).code, 0) << args[0];
    const std::string tag = std::string("subspace-probe ") + kVersion;
    for (const char* f : {"grid.csv", "minima.csv", "pp.csv", "trace.csv", "pairs.csv", "r.csv"}) {
        const auto text = slurp(f);
        EXPECT_EQ(text.rfind("# " + tag + " config={", 0), 0u) << f;
    }
    for (const char* f : {"grid.svg", "trace.svg"}) EXPECT_NE(slurp(f).find(tag), std::string::npos) << f;
    for (const char* f : {"compA.json", "compS.json", "diag.json"}) {
        const auto j = nlohmann::json::parse(slurp(f));
        EXPECT_EQ(j.at("version"), kVersion) << f;
        EXPECT_TRUE(j.at("config").contains("command")) << f;
    }
    for (const char* f : {"fit.rsd", "eval.rsd"}) {
        const auto d = read_dump(f);
        EXPECT_EQ(d.meta.at("version"), kVersion);
        EXPECT_EQ(d.meta.at("config").at("command"), "simulate");
    }
    const auto diag = nlohmann::json::parse(slurp("diag.json"));
    EXPECT_EQ(diag.at("status"), "ok");
    EXPECT_EQ(diag.at("top_k"), 4);
}

TEST_F(Cli, SimulateFromPromptFileAndSavedModel) {
    ASSERT_EQ(run({"simulate", "--model", "sharing-control", "--model-seed", "2", "--n", "5", "--out", "a.rsd",
                   "--config-out", "model.json"})
                  .code,
              0);
    EXPECT_EQ(run({"simulate", "--model-config", "model.json", "--out", "b.rsd"}).code, 2);

    const auto b = build_sharing_model(load_pair_pool(test_support::data_dir() / "country-capital.json"), 2, false);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : generate_prompts(b.pool, 8, 4, 6)) arr.push_back(to_json(s));
    write_text_file("prompts.json", arr.dump());
    ASSERT_EQ(run({"simulate", "--model-config", "model.json", "--prompts", "prompts.json", "--out", "b.rsd"}).code, 0);
    ASSERT_EQ(run({"simulate", "--model", "sharing-control", "--model-seed", "2", "--prompts", "prompts.json", "--out",
                   "c.rsd"})
                  .code,
              0);
    const auto from_file = read_dump("b.rsd"), built = read_dump("c.rsd");
    EXPECT_EQ(from_file.prompts, built.prompts);
    EXPECT_EQ(from_file.values, built.values);
    EXPECT_EQ(from_file.model_name, "toy:sharing-control");
}
