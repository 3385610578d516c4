#pragma once

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "subspace_probe/error.hpp"
#include "subspace_probe/prompts.hpp"

namespace subspace_probe {

inline constexpr char kDumpMagic[8] = {'R', 'S', 'D', 'U', 'M', 'P', '0', '1'};

struct DumpPrompt {
    std::string prompt_id;
    std::string task_name;
    std::optional<bool> correct;
    std::vector<RoleToken> tokens;
    // Optional provenance carried through the header: seed, expected_answer, generated.
    std::optional<std::uint64_t> seed;
    std::optional<std::string> expected_answer;
    std::optional<std::string> generated;

    friend bool operator==(const DumpPrompt&, const DumpPrompt&) = default;
};

/// Residual vectors of every token at every depth (layer 0 = embeddings),
/// stored as float32 in [token][layer][dim] order.
struct ResidualStreamDump {
    std::string model_name;
    std::size_t n_layers = 0;
    std::size_t hidden_dim = 0;
    std::vector<DumpPrompt> prompts;
    std::vector<float> values;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& p : prompts) n += p.tokens.size();
        return n;
    }

    std::size_t stride() const { return (n_layers + 1) * hidden_dim; }

    /// Index of the first token of each prompt in the flat token axis.
    std::vector<std::size_t> token_offsets() const {
        std::vector<std::size_t> out;
        std::size_t n = 0;
        for (const auto& p : prompts) {
            out.push_back(n);
            n += p.tokens.size();
        }
        return out;
    }

    std::span<const float> residual(std::size_t token, std::size_t layer) const {
        return {values.data() + token * stride() + layer * hidden_dim, hidden_dim};
    }
    std::span<float> residual(std::size_t token, std::size_t layer) {
        return {values.data() + token * stride() + layer * hidden_dim, hidden_dim};
    }

    void validate() const {
        if (values.size() != total_tokens() * stride())
            fail(ErrorKind::InvariantViolation, "value count " + std::to_string(values.size()) + " != " +
                                                    std::to_string(total_tokens()) + " tokens x " +
                                                    std::to_string(stride()));
        for (const auto& p : prompts) {
            std::size_t finals = 0;
            for (const auto& t : p.tokens) finals += t.role == Role::FinalSeparator;
            if (finals != 1)
                fail(ErrorKind::InvariantViolation,
                     "prompt '" + p.prompt_id + "' has " + std::to_string(finals) + " final separators");
        }
        for (float v : values)
            if (!std::isfinite(v)) fail(ErrorKind::InvariantViolation, "non-finite residual value");
    }

    friend bool operator==(const ResidualStreamDump& a, const ResidualStreamDump& b) {
        return a.model_name == b.model_name && a.n_layers == b.n_layers && a.hidden_dim == b.hidden_dim &&
               a.prompts == b.prompts && a.meta == b.meta && a.values.size() == b.values.size() &&
               (a.values.empty() ||
                std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);
    }
};

namespace detail {

inline std::uint32_t to_le32(std::uint32_t x) {
    if constexpr (std::endian::native == std::endian::big)
        return ((x & 0xFFu) << 24) | ((x & 0xFF00u) << 8) | ((x >> 8) & 0xFF00u) | (x >> 24);
    return x;
}

inline nlohmann::json dump_header(const ResidualStreamDump& d) {
    nlohmann::json prompts = nlohmann::json::array();
    for (const auto& p : d.prompts) {
        nlohmann::json toks = nlohmann::json::array();
        for (const auto& t : p.tokens)
            toks.push_back({{"text", t.text}, {"role", role_name(t.role)}, {"position", t.prompt_position}});
        nlohmann::json jp = {{"prompt_id", p.prompt_id},
                             {"task_name", p.task_name},
                             {"correct", p.correct ? nlohmann::json(*p.correct) : nlohmann::json(nullptr)},
                             {"tokens", toks}};
        if (p.seed) jp["seed"] = *p.seed;
        if (p.expected_answer) jp["expected_answer"] = *p.expected_answer;
        if (p.generated) jp["generated"] = *p.generated;
        prompts.push_back(std::move(jp));
    }
    return {{"format", "RSDUMP01"},  {"model_name", d.model_name}, {"n_layers", d.n_layers},
            {"hidden_dim", d.hidden_dim}, {"prompts", prompts},       {"meta", d.meta}};
}

inline ResidualStreamDump parse_header(const nlohmann::json& j) {
    ResidualStreamDump d;
    d.model_name = j.at("model_name").get<std::string>();
    d.n_layers = j.at("n_layers").get<std::size_t>();
    d.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    if (j.contains("meta")) d.meta = j.at("meta");
    for (const auto& jp : j.at("prompts")) {
        DumpPrompt p;
        p.prompt_id = jp.at("prompt_id").get<std::string>();
        p.task_name = jp.at("task_name").get<std::string>();
        if (jp.contains("correct") && !jp.at("correct").is_null()) p.correct = jp.at("correct").get<bool>();
        for (const auto& jt : jp.at("tokens"))
            p.tokens.push_back({jt.at("text").get<std::string>(), parse_role(jt.at("role").get<std::string>()),
                                jt.at("position").get<std::size_t>()});
        if (jp.contains("seed")) p.seed = jp.at("seed").get<std::uint64_t>();
        if (jp.contains("expected_answer")) p.expected_answer = jp.at("expected_answer").get<std::string>();
        if (jp.contains("generated")) p.generated = jp.at("generated").get<std::string>();
        d.prompts.push_back(std::move(p));
    }
    return d;
}

}  // namespace detail

inline std::string serialize_dump(const ResidualStreamDump& dump) {
    dump.validate();
    const std::string header = detail::dump_header(dump).dump();
    if (header.size() > 0xFFFFFFFFu) fail(ErrorKind::InvariantViolation, "header exceeds 4 GiB");
    std::string out(kDumpMagic, sizeof kDumpMagic);
    const std::uint32_t len = detail::to_le32(static_cast<std::uint32_t>(header.size()));
    out.append(reinterpret_cast<const char*>(&len), 4);
    out += header;
    const std::size_t base = out.size();
    out.resize(base + dump.values.size() * 4);
    for (std::size_t i = 0; i < dump.values.size(); ++i) {
        const std::uint32_t bits = detail::to_le32(std::bit_cast<std::uint32_t>(dump.values[i]));
        std::memcpy(out.data() + base + i * 4, &bits, 4);
    }
    return out;
}

inline ResidualStreamDump deserialize_dump(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kDumpMagic, 8) != 0)
        fail(ErrorKind::BadMagic, "missing RSDUMP01 magic");
    if (bytes.size() < 12) fail(ErrorKind::TruncatedPayload, "file ends inside the header length");
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 4);
    len = detail::to_le32(len);
    if (len > bytes.size() - 12)
        fail(ErrorKind::TruncatedPayload, "header length " + std::to_string(len) + " exceeds file size");
    ResidualStreamDump dump;
    try {
        dump = detail::parse_header(nlohmann::json::parse(bytes.substr(12, len)));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::HeaderParseError, e.what());
    } catch (const Error& e) {
        fail(ErrorKind::HeaderParseError, e.what());
    }
    const std::size_t expected = dump.total_tokens() * dump.stride() * 4;
    const std::size_t payload = bytes.size() - 12 - len;
    if (payload < expected)
        fail(ErrorKind::TruncatedPayload,
             "payload has " + std::to_string(payload) + " bytes, expected " + std::to_string(expected));
    if (payload > expected)
        fail(ErrorKind::InvariantViolation, std::to_string(payload - expected) + " trailing bytes after payload");
    dump.values.resize(expected / 4);
    const char* base = bytes.data() + 12 + len;
    for (std::size_t i = 0; i < dump.values.size(); ++i) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, base + i * 4, 4);
        dump.values[i] = std::bit_cast<float>(detail::to_le32(bits));
    }
    dump.validate();
    return dump;
}

inline void write_dump(const ResidualStreamDump& dump, const std::filesystem::path& path) {
    const std::string bytes = serialize_dump(dump);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "write to " + path.string() + " failed");
}

inline ResidualStreamDump read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_dump(bytes);
}

}  // namespace subspace_probe
