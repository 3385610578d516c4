#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "subspace_probe/dumpio.hpp"
#include "subspace_probe/parallel.hpp"
#include "subspace_probe/rng.hpp"
#include "subspace_probe/toy_transformer.hpp"

namespace subspace_probe {

struct SimulationOptions {
    bool label = true;
    // Relative scale of Gaussian noise added to the last-layer final-separator
    // residual of every incorrectly answered prompt; 0 disables.
    double noise_incorrect = 0.0;
    std::uint64_t noise_seed = 0;
    unsigned threads = 1;
    PromptTemplate tpl{};
};

inline std::string prompt_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%05zu", i);
    return buf;
}

/// Runs the toy model on every prompt and packs the traces into a dump.
inline ResidualStreamDump simulate_dump(const ToyModelConfig& config, const std::vector<PromptSpec>& prompts,
                                        const SimulationOptions& opt = {}) {
    std::vector<ModelRun> runs(prompts.size());
    std::vector<std::string> generated(prompts.size());
    parallel_for(prompts.size(), opt.threads, [&](std::size_t i) {
        runs[i] = run_model(config, prompts[i], opt.tpl);
        generated[i] = decode_run(config, runs[i]);
    });

    ResidualStreamDump dump;
    dump.model_name = "toy:" + config.name;
    dump.n_layers = config.n_layers;
    dump.hidden_dim = config.d;
    dump.meta["toy_model"] = {{"name", config.name}, {"seed", config.seed}};
    dump.meta["noise_incorrect"] = opt.noise_incorrect;
    dump.meta["noise_seed"] = opt.noise_seed;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        DumpPrompt p;
        p.prompt_id = prompt_id(i);
        p.task_name = prompts[i].task_name;
        p.tokens = runs[i].prompt.tokens;
        p.seed = prompts[i].seed;
        p.expected_answer = prompts[i].expected_answer;
        p.generated = generated[i];
        if (opt.label) p.correct = is_correct(generated[i], prompts[i].expected_answer);
        dump.prompts.push_back(std::move(p));
    }
    dump.values.resize(dump.total_tokens() * dump.stride());
    std::size_t tok = 0;
    for (const auto& run : runs) {
        for (std::size_t i = 0; i < run.prompt.tokens.size(); ++i, ++tok)
            for (std::size_t l = 0; l <= config.n_layers; ++l) {
                auto dst = dump.residual(tok, l);
                const auto src = run.trace.h[l].row(i);
                for (std::size_t k = 0; k < config.d; ++k) dst[k] = static_cast<float>(src[k]);
            }
    }

    if (opt.noise_incorrect > 0.0) {
        if (!opt.label) fail(ErrorKind::InvalidArgument, "noise injection needs labels");
        Rng rng(opt.noise_seed);
        const auto offsets = dump.token_offsets();
        const double scale = opt.noise_incorrect / std::sqrt(static_cast<double>(config.d));
        for (std::size_t i = 0; i < dump.prompts.size(); ++i) {
            if (*dump.prompts[i].correct) continue;
            const auto& toks = dump.prompts[i].tokens;
            std::size_t fs = 0;
            for (std::size_t t = 0; t < toks.size(); ++t)
                if (toks[t].role == Role::FinalSeparator) fs = t;
            auto h = dump.residual(offsets[i] + fs, config.n_layers);
            double n = 0.0;
            for (float v : h) n += static_cast<double>(v) * v;
            n = std::sqrt(n);
            for (auto& v : h) v = static_cast<float>(v + scale * n * gaussian(rng));
        }
    }
    dump.validate();
    return dump;
}

}  // namespace subspace_probe
