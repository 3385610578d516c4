#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "subspace_probe/dumpio.hpp"
#include "subspace_probe/simulate.hpp"
#include "support.hpp"

using namespace subspace_probe;
using test_support::error_kind;

namespace {

ResidualStreamDump one_token_dump() {
    ResidualStreamDump d;
    d.model_name = "unit";
    d.n_layers = 1;
    d.hidden_dim = 2;
    d.prompts.push_back({"p0", "antonym", true, {{"A:", Role::FinalSeparator, 0}}, {}, {}, {}});
    d.values = {0.0f, 0.0f, 1.0f, 2.0f};
    return d;
}

std::uint32_t header_length(const std::string& bytes) {
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data() + 8);
    return u[0] | (u[1] << 8) | (u[2] << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}

ResidualStreamDump toy_dump() {
    const auto pool = load_pair_pool(test_support::data_dir() / "antonym.json");
    const auto b = build_counting_model(pool, 4);
    return simulate_dump(b.config, generate_prompts(b.pool, 6, 3, 2));
}

}  // namespace

TEST(DumpFormat, EmptyPromptList) {
    ResidualStreamDump d;
    d.model_name = "empty";
    d.n_layers = 2;
    d.hidden_dim = 3;
    const auto bytes = serialize_dump(d);
    EXPECT_EQ(bytes.size(), 12u + header_length(bytes));
    EXPECT_EQ(deserialize_dump(bytes), d);
}

TEST(DumpFormat, PayloadIsLittleEndianFloats) {
    const auto bytes = serialize_dump(one_token_dump());
    ASSERT_EQ(bytes.substr(0, 8), "RSDUMP01");
    const std::uint32_t len = header_length(bytes);
    ASSERT_EQ(bytes.size(), 12u + len + 16u);
    const unsigned char expected[16] = {0, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40};
    EXPECT_EQ(std::memcmp(bytes.data() + 12 + len, expected, 16), 0);
    const auto header = nlohmann::json::parse(bytes.substr(12, len));
    EXPECT_EQ(header.at("model_name"), "unit");
    EXPECT_EQ(header.at("n_layers"), 1);
    EXPECT_EQ(header.at("hidden_dim"), 2);
    EXPECT_EQ(header.at("prompts")[0].at("tokens")[0].at("role"), "FinalSeparator");
    EXPECT_EQ(header.at("prompts")[0].at("correct"), true);
}

TEST(DumpFormat, ToyRoundTripIsBitExact) {
    const auto d = toy_dump();
    const auto path = std::filesystem::temp_directory_path() / "subspace_probe_roundtrip.rsd";
    write_dump(d, path);
    const auto back = read_dump(path);
    EXPECT_EQ(back, d);
    EXPECT_EQ(serialize_dump(back), serialize_dump(d));
    std::filesystem::remove(path);
}

TEST(DumpFormat, SpecialFloatBitsSurvive) {
    auto d = one_token_dump();
    d.values = {-0.0f, 1e-42f, 3.4028235e38f, -1.17549435e-38f};
    const auto back = deserialize_dump(serialize_dump(d));
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(std::bit_cast<std::uint32_t>(back.values[i]), std::bit_cast<std::uint32_t>(d.values[i]));
}

TEST(DumpFormat, ReadErrors) {
    const auto good = serialize_dump(one_token_dump());
    auto bad = good;
    bad[0] = 'X';
    EXPECT_EQ(error_kind([&] { deserialize_dump(bad); }), ErrorKind::BadMagic);
    EXPECT_EQ(error_kind([&] { deserialize_dump(good.substr(0, good.size() - 4)); }), ErrorKind::TruncatedPayload);
    EXPECT_EQ(error_kind([&] { deserialize_dump(good.substr(0, 10)); }), ErrorKind::TruncatedPayload);
    EXPECT_EQ(error_kind([&] { deserialize_dump(good + "xxxx"); }), ErrorKind::InvariantViolation);
    auto broken = good;
    broken[12] = '[';
    EXPECT_EQ(error_kind([&] { deserialize_dump(broken); }), ErrorKind::HeaderParseError);
    auto huge = good;
    huge[11] = '\x7f';
    EXPECT_EQ(error_kind([&] { deserialize_dump(huge); }), ErrorKind::TruncatedPayload);
    EXPECT_EQ(error_kind([] { read_dump("/nonexistent/x.rsd"); }), ErrorKind::IoError);
}

TEST(DumpFormat, UnknownRoleInHeader) {
    auto bytes = serialize_dump(one_token_dump());
    const auto pos = bytes.find("FinalSeparator");
    bytes.replace(pos, 14, "FinalSeparatoX");
    EXPECT_EQ(error_kind([&] { deserialize_dump(bytes); }), ErrorKind::HeaderParseError);
}

TEST(DumpFormat, WriteRejectsInvariantViolations) {
    auto d = one_token_dump();
    d.values.push_back(0.0f);
    EXPECT_EQ(error_kind([&] { serialize_dump(d); }), ErrorKind::InvariantViolation);
    d = one_token_dump();
    d.values[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(error_kind([&] { serialize_dump(d); }), ErrorKind::InvariantViolation);
    d = one_token_dump();
    d.prompts[0].tokens[0].role = Role::Separator;
    EXPECT_EQ(error_kind([&] { serialize_dump(d); }), ErrorKind::InvariantViolation);
}

TEST(DumpLayout, TokenLayerDimOrder) {
    const auto d = toy_dump();
    const auto pool = load_pair_pool(test_support::data_dir() / "antonym.json");
    const auto b = build_counting_model(pool, 4);
    const auto specs = generate_prompts(b.pool, 6, 3, 2);
    const auto offsets = d.token_offsets();
    const auto run = run_model(b.config, specs[3]);
    for (std::size_t t = 0; t < run.prompt.tokens.size(); ++t)
        for (std::size_t l = 0; l <= d.n_layers; ++l) {
            const auto r = d.residual(offsets[3] + t, l);
            for (std::size_t k = 0; k < d.hidden_dim; ++k)
                EXPECT_EQ(r[k], static_cast<float>(run.trace.h[l](t, k)));
        }
}

TEST(Simulate, LabelsAndNoise) {
    const auto pool = load_pair_pool(test_support::data_dir() / "country-capital.json");
    const auto b = build_counting_model(pool, 11);
    const auto specs = generate_prompts(b.pool, 40, 1, 3);
    SimulationOptions clean;
    const auto base = simulate_dump(b.config, specs, clean);
    SimulationOptions noisy;
    noisy.noise_incorrect = 2.0;
    noisy.noise_seed = 1;
    noisy.threads = 4;
    const auto d = simulate_dump(b.config, specs, noisy);
    const auto offsets = d.token_offsets();
    std::size_t wrong = 0;
    for (std::size_t p = 0; p < d.prompts.size(); ++p) {
        ASSERT_TRUE(d.prompts[p].correct.has_value());
        EXPECT_EQ(*d.prompts[p].correct, is_correct(*d.prompts[p].generated, specs[p].expected_answer));
        const std::size_t last = offsets[p] + d.prompts[p].tokens.size() - 1;
        const auto a = d.residual(last, d.n_layers), c = base.residual(last, d.n_layers);
        const bool changed = !std::equal(a.begin(), a.end(), c.begin());
        EXPECT_EQ(changed, !*d.prompts[p].correct);
        wrong += !*d.prompts[p].correct;
        const auto a0 = d.residual(last, d.n_layers - 1), c0 = base.residual(last, d.n_layers - 1);
        EXPECT_TRUE(std::equal(a0.begin(), a0.end(), c0.begin()));
    }
    EXPECT_GT(wrong, 0u);

    SimulationOptions unlabeled;
    unlabeled.label = false;
    for (const auto& p : simulate_dump(b.config, specs, unlabeled).prompts) EXPECT_FALSE(p.correct.has_value());
    unlabeled.noise_incorrect = 1.0;
    EXPECT_EQ(error_kind([&] { simulate_dump(b.config, specs, unlabeled); }), ErrorKind::InvalidArgument);
}

TEST(Simulate, ThreadCountDoesNotChangeBytes) {
    const auto pool = load_pair_pool(test_support::data_dir() / "synonym.json");
    const auto b = build_counting_model(pool, 2);
    const auto specs = generate_prompts(b.pool, 30, 3, 8);
    SimulationOptions one, many;
    one.noise_incorrect = many.noise_incorrect = 1.5;
    many.threads = 7;
    EXPECT_EQ(serialize_dump(simulate_dump(b.config, specs, one)), serialize_dump(simulate_dump(b.config, specs, many)));
}
