#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "subspace_probe/analysis.hpp"
#include "subspace_probe/decomposition.hpp"
#include "subspace_probe/dumpio.hpp"
#include "subspace_probe/prompts.hpp"
#include "subspace_probe/report.hpp"
#include "subspace_probe/simulate.hpp"
#include "subspace_probe/toy_transformer.hpp"
#include "subspace_probe/version.hpp"

#ifndef SUBSPACE_PROBE_SOURCE_DATA_DIR
#define SUBSPACE_PROBE_SOURCE_DATA_DIR "data"
#endif

namespace subspace_probe {

inline std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("SUBSPACE_PROBE_DATA"); env && *env) return env;
    return SUBSPACE_PROBE_SOURCE_DATA_DIR;
}

inline TaskPool resolve_pool(const std::string& task, const std::string& pool_path) {
    if (pool_path.empty() && task.empty()) fail(ErrorKind::InvalidArgument, "need --task or --pool");
    const std::filesystem::path p = pool_path.empty() ? default_data_dir() / (task + ".json") : std::filesystem::path(pool_path);
    TaskPool pool = load_pair_pool(p);
    if (!task.empty()) pool.task_name = task;
    return pool;
}

/// "lo:hi", "lo:" , ":hi" or a single layer.
inline LayerRange parse_layer_range(const std::string& s) {
    LayerRange r;
    if (s.empty()) return r;
    auto num = [&](const std::string& t) -> std::size_t {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(t, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != t.size() || t.empty()) fail(ErrorKind::InvalidArgument, "bad layer range '" + s + "'");
        return v;
    };
    const auto colon = s.find(':');
    if (colon == std::string::npos) {
        r.first = r.last = num(s);
        return r;
    }
    if (colon > 0) r.first = num(s.substr(0, colon));
    if (colon + 1 < s.size()) r.last = num(s.substr(colon + 1));
    return r;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline ComponentSet load_components(const std::string& path) { return component_set_from_json(read_json_file(path)); }

/// Flags of a parsed subcommand as JSON; unset options contribute their defaults.
inline nlohmann::json run_config(const CLI::App& sub) {
    nlohmann::json j = nlohmann::json::object();
    j["command"] = sub.get_name();
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_name() == "--help" || opt->get_name() == "--threads") continue;
        std::string key = opt->get_name();
        while (!key.empty() && key.front() == '-') key.erase(key.begin());
        if (opt->count() > 0) {
            if (opt->get_type_size() == 0) j[key] = true;
            else j[key] = opt->as<std::string>();
        } else if (!opt->get_default_str().empty()) {
            j[key] = opt->get_default_str();
        }
    }
    return j;
}

inline nlohmann::json stamp(nlohmann::json j, const nlohmann::json& config) {
    j["version"] = kVersion;
    j["config"] = config;
    return j;
}

struct CliStreams {
    std::ostream& out;
    std::ostream& err;
};

/// Parses and runs one subcommand. args excludes the program name.
/// Returns 0 on success, 1 on usage errors, 2 on data or validation errors.
inline int run_command(const std::vector<std::string>& args, CliStreams io = {std::cout, std::cerr}) {
    CLI::App app{"Residual-stream subspace probing toolkit", "subspace-probe"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    unsigned threads = 1;

    // gen-prompts
    std::string task, pool_path, out;
    std::size_t n = 200, examples = 5;
    std::uint64_t seed = 0;
    auto* gen = app.add_subcommand("gen-prompts", "Sample ICL prompt specs from a word-pair pool");
    gen->add_option("--task", task, "Task name; selects <data>/<task>.json unless --pool is given");
    gen->add_option("--n", n, "Number of prompts");
    gen->add_option("--examples", examples, "Examples per prompt");
    gen->add_option("--seed", seed, "Sampling seed");
    gen->add_option("--pool", pool_path, "Pair pool JSON file");
    gen->add_option("--out", out, "Output prompts JSON")->required();

    // simulate
    std::string model = "counting", model_config, prompts_path, config_out;
    std::uint64_t model_seed = 0, noise_seed = 0;
    double noise = 0.0;
    bool no_label = false;
    auto* sim = app.add_subcommand("simulate", "Run the toy transformer and write an RSDUMP01 residual dump");
    sim->add_option("--model", model, "counting | sharing-shared | sharing-control")
        ->check(CLI::IsMember({"counting", "sharing-shared", "sharing-control"}));
    sim->add_option("--model-config", model_config, "Load a toy model JSON instead of building one");
    sim->add_option("--model-seed", model_seed, "Seed for building the toy model");
    sim->add_option("--task", task, "Task name for the pair pool");
    sim->add_option("--pool", pool_path, "Pair pool JSON file");
    sim->add_option("--prompts", prompts_path, "Prompt specs; otherwise sampled from the model's pairs");
    sim->add_option("--n", n, "Number of prompts when sampling");
    sim->add_option("--examples", examples, "Examples per prompt when sampling");
    sim->add_option("--seed", seed, "Prompt sampling seed");
    sim->add_option("--noise-incorrect", noise, "Relative noise added to incorrect prompts' last-layer final separator");
    sim->add_option("--noise-seed", noise_seed, "Noise seed");
    sim->add_flag("--no-label", no_label, "Leave correctness labels empty");
    sim->add_option("--config-out", config_out, "Also write the toy model JSON here");
    sim->add_option("--out", out, "Output dump")->required();

    // decompose
    std::string dump_path, role = "answer", method = "ica", layers;
    std::optional<std::size_t> k;
    double lambda_fit = 1.0;
    std::optional<std::size_t> max_iter;
    auto* dec = app.add_subcommand("decompose", "Fit ICA or dictionary components to one role's residuals");
    dec->add_option("--dump", dump_path, "Residual dump")->required();
    dec->add_option("--role", role, "Token role: query, separator, answer, test-query, final-separator");
    dec->add_option("--method", method, "ica | dictionary")->check(CLI::IsMember({"ica", "dictionary"}));
    dec->add_option("--k", k, "Component count (default 20 for ICA, 300 for dictionary)");
    dec->add_option("--seed", seed, "Fitting seed");
    dec->add_option("--lambda", lambda_fit, "Dictionary sparsity penalty");
    dec->add_option("--max-iter", max_iter, "Iteration cap");
    dec->add_option("--layers", layers, "Layer range lo:hi (inclusive), default all");
    dec->add_option("--out", out, "Output component set JSON")->required();

    // distances
    std::string sep_path, ans_path, minima_path;
    auto* dis = app.add_subcommand("distances", "Distance grid between separator and answer components");
    dis->add_option("--separators", sep_path, "Separator component set")->required();
    dis->add_option("--answers", ans_path, "Answer component set")->required();
    dis->add_option("--minima", minima_path, "Also write per-answer-component minima CSV");
    dis->add_option("--out", out, "Output grid CSV")->required();

    // align
    std::string components_path, per_prompt_path;
    double lambda_code = 0.1;
    auto* ali = app.add_subcommand("align", "Coding coefficients of the final separator across layers");
    ali->add_option("--dump", dump_path, "Residual dump")->required();
    ali->add_option("--components", components_path, "Answer component set")->required();
    ali->add_option("--lambda", lambda_code, "Encoding penalty");
    ali->add_option("--per-prompt", per_prompt_path, "Also write per-prompt coefficients CSV");
    ali->add_option("--out", out, "Output trace CSV")->required();

    // correlate
    std::optional<std::size_t> final_layer;
    auto* cor = app.add_subcommand("correlate", "Pair minimum distances with final-layer coefficients");
    cor->add_option("--dump", dump_path, "Residual dump")->required();
    cor->add_option("--separators", sep_path, "Separator component set")->required();
    cor->add_option("--answers", ans_path, "Answer component set")->required();
    cor->add_option("--lambda", lambda_code, "Encoding penalty");
    cor->add_option("--final-layer", final_layer, "Layer whose coefficients are scored (default last)");
    cor->add_option("--out", out, "Output pairs CSV")->required();

    // diagnose
    std::size_t top = 4;
    std::string target = "final-separator", ratio_path;
    auto* dia = app.add_subcommand("diagnose", "Compare top-k coefficient ratios of correct and incorrect prompts");
    dia->add_option("--dump", dump_path, "Labeled residual dump")->required();
    dia->add_option("--components", components_path, "Answer component set")->required();
    dia->add_option("--top", top, "Top components in the ratio");
    dia->add_option("--lambda", lambda_code, "Encoding penalty");
    dia->add_option("--target", target, "final-separator | generated-first")
        ->check(CLI::IsMember({"final-separator", "generated-first"}));
    dia->add_option("--csv", ratio_path, "Also write per-prompt ratios CSV");
    dia->add_option("--out", out, "Output result JSON")->required();

    // report
    std::string input, title, x_label, y_label;
    auto* rep = app.add_subcommand("report", "Render a grid or trace CSV as an SVG heatmap");
    rep->add_option("--input", input, "Grid or trace CSV")->required();
    rep->add_option("--title", title, "Figure title");
    rep->add_option("--x-label", x_label, "Column axis label");
    rep->add_option("--y-label", y_label, "Row axis label");
    rep->add_option("--out", out, "Output SVG")->required();

    for (auto* sub : {gen, sim, dec, dis, ali, cor, dia, rep})
        sub->add_option("--threads", threads, "Worker cap; results do not depend on it")->check(CLI::Range(1u, 1024u));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        io.out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        io.out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        io.out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        io.err << "error: " << e.what() << "\n";
        io.err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    const nlohmann::json config = run_config(*sub);
    try {
        if (sub == gen) {
            const auto pool = resolve_pool(task, pool_path);
            const auto specs = generate_prompts(pool, n, examples, seed);
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& s : specs) arr.push_back(to_json(s));
            write_json_file(out, stamp({{"prompts", arr}}, config));
            io.out << "wrote " << specs.size() << " prompts to " << out << "\n";
        } else if (sub == sim) {
            ToyModelConfig cfg;
            std::optional<TaskPool> known;
            if (!model_config.empty()) {
                cfg = toy_config_from_json(read_json_file(model_config));
            } else {
                const auto pool = resolve_pool(task.empty() && pool_path.empty() ? "country-capital" : task, pool_path);
                ToyBuild b = model == "counting" ? build_counting_model(pool, model_seed)
                                                 : build_sharing_model(pool, model_seed, model == "sharing-shared");
                cfg = std::move(b.config);
                known = std::move(b.pool);
            }
            std::vector<PromptSpec> specs;
            if (!prompts_path.empty()) {
                specs = prompts_from_json(read_json_file(prompts_path));
            } else {
                if (!known) fail(ErrorKind::InvalidArgument, "--model-config needs --prompts");
                specs = generate_prompts(*known, n, examples, seed);
            }
            SimulationOptions so;
            so.label = !no_label;
            so.noise_incorrect = noise;
            so.noise_seed = noise_seed;
            so.threads = threads;
            auto dump = simulate_dump(cfg, specs, so);
            dump.meta["version"] = kVersion;
            dump.meta["config"] = config;
            write_dump(dump, out);
            if (!config_out.empty()) write_json_file(config_out, stamp(to_json(cfg), config));
            std::size_t good = 0;
            for (const auto& p : dump.prompts) good += p.correct.value_or(false);
            io.out << "wrote " << dump.prompts.size() << " prompts (" << dump.total_tokens() << " tokens) to " << out;
            if (so.label) io.out << "; " << good << " correct";
            io.out << "\n";
        } else if (sub == dec) {
            const auto dump = read_dump(dump_path);
            const Method m = parse_method(method);
            const auto X = collect_role_matrix(dump, parse_role(role), parse_layer_range(layers));
            const std::size_t kk = k.value_or(m == Method::ICA ? 20 : 300);
            std::optional<ComponentSet> cs;
            if (m == Method::ICA) {
                IcaOptions o;
                o.seed = seed;
                if (max_iter) o.max_iter = *max_iter;
                cs = fit_ica(X, kk, o);
            } else {
                DictionaryOptions o;
                o.seed = seed;
                o.lambda = lambda_fit;
                if (max_iter) o.max_iter = *max_iter;
                cs = fit_dictionary(X, kk, o).components;
            }
            write_json_file(out, stamp(to_json(*cs), config));
            io.out << "fit " << kk << " " << method << " components on " << X.rows() << " rows ("
                   << (cs->meta().converged ? "converged" : "not converged") << ") -> " << out << "\n";
        } else if (sub == dis) {
            const auto rep_ = component_distance_report(load_components(sep_path), load_components(ans_path), threads);
            write_text_file(out, distance_grid_csv(rep_.grid, config));
            if (!minima_path.empty()) write_text_file(minima_path, minima_csv(rep_.minima, config));
            io.out << "min distance " << format_number(*std::min_element(rep_.minima.begin(), rep_.minima.end()))
                   << "\n";
        } else if (sub == ali) {
            const auto dump = read_dump(dump_path);
            const auto tr = alignment_trace(dump, load_components(components_path), lambda_code, threads);
            write_text_file(out, trace_csv(tr, config));
            if (!per_prompt_path.empty()) {
                std::vector<std::string> ids;
                for (const auto& p : dump.prompts) ids.push_back(p.prompt_id);
                write_text_file(per_prompt_path, trace_per_prompt_csv(tr, ids, config));
            }
            io.out << "traced " << dump.prompts.size() << " prompts over " << tr.layers << " depths -> " << out << "\n";
        } else if (sub == cor) {
            const auto dump = read_dump(dump_path);
            const auto cs = load_components(sep_path), ca = load_components(ans_path);
            const auto tr = alignment_trace(dump, ca, lambda_code, threads);
            const auto r = distance_vs_score(cs, ca, tr, final_layer.value_or(dump.n_layers));
            write_text_file(out, pairs_csv(r, config));
            io.out << "rank correlation "
                   << (r.rank_correlation ? format_number(*r.rank_correlation) : std::string("none")) << "\n";
        } else if (sub == dia) {
            const auto dump = read_dump(dump_path);
            const auto res = diagnose(dump, load_components(components_path), lambda_code, top,
                                      target == "final-separator" ? DiagnosisTarget::FinalSeparator
                                                                  : DiagnosisTarget::GeneratedFirst,
                                      threads);
            write_json_file(out, stamp(to_json(res), config));
            if (!ratio_path.empty()) write_text_file(ratio_path, ratio_csv(res, config));
            io.out << "status " << res.status << "; correct " << res.n_correct << ", incorrect " << res.n_incorrect;
            if (res.p_value) io.out << "; t " << format_number(*res.t_statistic) << ", p " << format_number(*res.p_value);
            io.out << "\n";
        } else if (sub == rep) {
            const auto h = parse_grid_csv(read_text_file(input));
            const bool trace = h.corner == "layer";
            const std::string xl = !x_label.empty() ? x_label : "answer component";
            const std::string yl = !y_label.empty() ? y_label : (trace ? "layer" : "separator component");
            const std::string t = !title.empty() ? title : std::filesystem::path(input).filename().string();
            write_text_file(out, render_svg(h, t, xl, yl, config));
            io.out << "rendered " << h.row_labels.size() << "x" << h.col_labels.size() << " heatmap -> " << out << "\n";
        }
    } catch (const Error& e) {
        io.err << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        io.err << "error: ParseError: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace subspace_probe
