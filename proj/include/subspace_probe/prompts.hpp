#pragma once

#include <json.hpp>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "subspace_probe/error.hpp"
#include "subspace_probe/rng.hpp"

namespace subspace_probe {

enum class Role { Query, Separator, Answer, TestQuery, FinalSeparator, GeneratedFirst };

inline std::string role_name(Role r) {
    switch (r) {
        case Role::Query: return "Query";
        case Role::Separator: return "Separator";
        case Role::Answer: return "Answer";
        case Role::TestQuery: return "TestQuery";
        case Role::FinalSeparator: return "FinalSeparator";
        case Role::GeneratedFirst: return "GeneratedFirst";
    }
    return "Unknown";
}

inline Role parse_role(const std::string& s) {
    std::string l;
    for (char c : s)
        if (c != '_' && c != '-') l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (l == "query") return Role::Query;
    if (l == "separator") return Role::Separator;
    if (l == "answer") return Role::Answer;
    if (l == "testquery") return Role::TestQuery;
    if (l == "finalseparator") return Role::FinalSeparator;
    if (l == "generatedfirst") return Role::GeneratedFirst;
    fail(ErrorKind::NoSuchRole, "unknown role '" + s + "'");
}

struct RoleToken {
    std::string text;
    Role role = Role::Query;
    std::size_t prompt_position = 0;

    friend bool operator==(const RoleToken&, const RoleToken&) = default;
};

using WordPair = std::pair<std::string, std::string>;

struct TaskPool {
    std::string task_name;
    std::vector<WordPair> pairs;
};

struct PromptSpec {
    std::string task_name;
    std::vector<WordPair> examples;
    std::string test_query;
    std::string expected_answer;
    std::uint64_t seed = 0;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct RenderedPrompt {
    std::string text;
    std::vector<RoleToken> tokens;
};

inline const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names{"antonym",        "synonym",         "country-capital",
                                                "english-french", "product-company", "person-sport"};
    return names;
}

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

/// Parses a pool from JSON text: an array of {input, output} objects or an
/// object whose "pairs" member is such an array.
inline TaskPool parse_pair_pool(const std::string& text, const std::string& task_name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        fail(ErrorKind::ParseError, "line " + std::to_string(line) + ", column " + std::to_string(col) +
                                        " (offset " + std::to_string(e.byte) + "): " + e.what());
    }
    const nlohmann::json* arr = &j;
    if (j.is_object() && j.contains("pairs")) arr = &j["pairs"];
    if (!arr->is_array()) fail(ErrorKind::ParseError, "expected an array of {input, output} objects");

    TaskPool pool{task_name, {}};
    std::set<std::string> seen;
    for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto& item = (*arr)[i];
        if (!item.is_object() || !item.contains("input") || !item.contains("output") ||
            !item["input"].is_string() || !item["output"].is_string())
            fail(ErrorKind::ParseError, "entry " + std::to_string(i) + " is not an {input, output} object");
        auto q = item["input"].get<std::string>();
        auto a = item["output"].get<std::string>();
        if (split_words(q).empty() || split_words(a).empty())
            fail(ErrorKind::ParseError, "entry " + std::to_string(i) + " has an empty side");
        if (!seen.insert(q).second) continue;
        pool.pairs.emplace_back(std::move(q), std::move(a));
    }
    if (pool.pairs.empty()) fail(ErrorKind::EmptyPool, "no pairs in pool '" + task_name + "'");
    return pool;
}

inline TaskPool load_pair_pool(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_pair_pool(ss.str(), path.stem().string());
}

/// Samples n_examples + 1 distinct pairs per prompt; the last becomes the test pair.
inline std::vector<PromptSpec> generate_prompts(const TaskPool& pool, std::size_t n_prompts, std::size_t n_examples,
                                                std::uint64_t seed) {
    if (n_examples < 1) fail(ErrorKind::InvalidArgument, "n_examples must be at least 1");
    if (pool.pairs.size() < n_examples + 1)
        fail(ErrorKind::PoolTooSmall, "pool '" + pool.task_name + "' has " + std::to_string(pool.pairs.size()) +
                                          " pairs, need " + std::to_string(n_examples + 1));
    Rng rng(seed);
    std::vector<PromptSpec> out;
    out.reserve(n_prompts);
    for (std::size_t p = 0; p < n_prompts; ++p) {
        const auto idx = sample_without_replacement(rng, pool.pairs.size(), n_examples + 1);
        PromptSpec spec;
        spec.task_name = pool.task_name;
        spec.seed = seed;
        for (std::size_t e = 0; e < n_examples; ++e) spec.examples.push_back(pool.pairs[idx[e]]);
        spec.test_query = pool.pairs[idx[n_examples]].first;
        spec.expected_answer = pool.pairs[idx[n_examples]].second;
        out.push_back(std::move(spec));
    }
    return out;
}

/// "<prefix>{q}<middle>{a}<suffix>"; the test block is prefix, query, then the
/// middle with trailing whitespace removed.
struct PromptTemplate {
    std::string prefix = "Q: ";
    std::string middle = "\nA: ";
    std::string suffix = "\n\n";

    static PromptTemplate parse(const std::string& t) {
        const auto q = t.find("{q}");
        const auto a = t.find("{a}");
        if (q == std::string::npos || a == std::string::npos || a < q)
            fail(ErrorKind::InvalidArgument, "template must contain {q} before {a}");
        PromptTemplate out{t.substr(0, q), t.substr(q + 3, a - q - 3), t.substr(a + 3)};
        if (split_words(out.middle).empty()) fail(ErrorKind::InvalidArgument, "template needs a separator mark");
        return out;
    }

    std::string str() const { return prefix + "{q}" + middle + "{a}" + suffix; }
};

inline RenderedPrompt render_prompt(const PromptSpec& spec, const PromptTemplate& tpl = {}) {
    if (spec.examples.empty()) fail(ErrorKind::InvalidArgument, "prompt has no examples");
    RenderedPrompt out;
    auto emit = [&](const std::string& segment, Role role) {
        out.text += segment;
        for (auto& w : split_words(segment)) out.tokens.push_back({w, role, out.tokens.size()});
    };
    for (const auto& [q, a] : spec.examples) {
        emit(tpl.prefix, Role::Query);
        emit(q, Role::Query);
        emit(tpl.middle, Role::Separator);
        emit(a, Role::Answer);
        emit(tpl.suffix, Role::Answer);
    }
    emit(tpl.prefix, Role::TestQuery);
    emit(spec.test_query, Role::TestQuery);
    std::string tail = tpl.middle;
    while (!tail.empty() && std::isspace(static_cast<unsigned char>(tail.back()))) tail.pop_back();
    emit(tail, Role::Separator);
    // The separator words of the final block: only the last one predicts the answer.
    out.tokens.back().role = Role::FinalSeparator;
    return out;
}

inline nlohmann::json to_json(const PromptSpec& s) {
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& [q, a] : s.examples) ex.push_back({q, a});
    return {{"task_name", s.task_name},
            {"examples", ex},
            {"test_query", s.test_query},
            {"expected_answer", s.expected_answer},
            {"seed", s.seed}};
}

inline PromptSpec prompt_spec_from_json(const nlohmann::json& j) {
    try {
        PromptSpec s;
        s.task_name = j.at("task_name").get<std::string>();
        for (const auto& e : j.at("examples")) {
            if (!e.is_array() || e.size() != 2) fail(ErrorKind::ParseError, "example must be [query, answer]");
            s.examples.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
        }
        s.test_query = j.at("test_query").get<std::string>();
        s.expected_answer = j.at("expected_answer").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        if (s.examples.empty()) fail(ErrorKind::ParseError, "prompt has no examples");
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("prompt spec: ") + e.what());
    }
}

/// Accepts a bare array of specs or an object holding them under "prompts".
inline std::vector<PromptSpec> prompts_from_json(const nlohmann::json& j) {
    const nlohmann::json* arr = &j;
    if (j.is_object() && j.contains("prompts")) arr = &j.at("prompts");
    if (!arr->is_array()) fail(ErrorKind::ParseError, "prompts file must be an array or hold a \"prompts\" array");
    std::vector<PromptSpec> out;
    for (const auto& item : *arr) out.push_back(prompt_spec_from_json(item));
    return out;
}

inline std::string normalize_word(const std::string& w) {
    std::string out;
    for (char c : w)
        if (!std::ispunct(static_cast<unsigned char>(c)) && !std::isspace(static_cast<unsigned char>(c)))
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Case-insensitive match of the first generated word against the first word
/// of the expected answer, ignoring punctuation and whitespace.
inline bool is_correct(const std::string& generated, const std::string& expected) {
    const auto g = split_words(generated);
    const auto e = split_words(expected);
    if (g.empty() || e.empty()) return false;
    const auto gw = normalize_word(g.front());
    return !gw.empty() && gw == normalize_word(e.front());
}

}  // namespace subspace_probe
