#include "kgconn/harness.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace kgconn;

namespace {

std::string read(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string scenario(const std::string& name) { return read(std::string(KGCONN_SOURCE_DIR) + "/scenarios/" + name); }

// Runs f and returns the ConfigError it throws.
template <class F>
ConfigError config_error(F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e;
    }
    ADD_FAILURE() << "no ConfigError";
    return ConfigError("NONE", "");
}

}  // namespace

TEST(Toml, ValuesTablesAndArrays) {
    auto d = toml::parse(R"(# comment
a = 1
b = -2.5e-3   # trailing
s = "x # not a comment \"q\""
flag = true
list = [1, 2.0, "z",]

[t.u]
k = 1_000

[[arr]]
v = 1
[[arr]]
v = 2
)");
    EXPECT_EQ(d.root["a"], 1);
    EXPECT_TRUE(d.root["a"].is_number_integer());
    EXPECT_DOUBLE_EQ(d.root["b"].get<double>(), -2.5e-3);
    EXPECT_EQ(d.root["s"], "x # not a comment \"q\"");
    EXPECT_EQ(d.root["flag"], true);
    EXPECT_EQ(d.root["list"].size(), 3u);
    EXPECT_EQ(d.root["t"]["u"]["k"], 1000);
    EXPECT_EQ(d.root["arr"][1]["v"], 2);
    EXPECT_EQ(d.line_of("/t/u/k"), 9);
    EXPECT_EQ(d.line_of("/arr/1/v"), 14);
}

TEST(Toml, SyntaxErrorsCarryCodes) {
    EXPECT_EQ(config_error([] { toml::parse("a = 1\na = 2\n"); }).code(), "CFG_DUPLICATE");
    EXPECT_EQ(config_error([] { toml::parse("[t]\nx=1\n[t]\ny=2\n"); }).code(), "CFG_DUPLICATE");
    auto e = config_error([] { toml::parse("a = 1\nb = \"open\n"); });
    EXPECT_EQ(e.code(), "CFG_SYNTAX");
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_EQ(config_error([] { toml::parse("a = 1x\n"); }).code(), "CFG_SYNTAX");
    EXPECT_EQ(config_error([] { toml::parse("just words\n"); }).code(), "CFG_SYNTAX");
    EXPECT_EQ(config_error([] { toml::parse("a = [[1]]\n"); }).code(), "CFG_SYNTAX");
}

TEST(Config, MinimalConfigGetsDefaults) {
    ScenarioConfig c = parse_config("");
    EXPECT_EQ(c.grid.n_x, 64);
    EXPECT_EQ(c.k_max, 3);
    EXPECT_EQ(c.n_max, 8);
    EXPECT_DOUBLE_EQ(c.grid.mass, 1.0);
    EXPECT_DOUBLE_EQ(c.grid.circumference, 8 * pi);
    EXPECT_TRUE(c.perturbations.empty());
    EXPECT_EQ(resolve_checks(c, {}), all_checks());
    EXPECT_EQ(c.tolerances, default_tolerances());
}

TEST(Config, ErrorCodesAndLines) {
    auto e = config_error([] { parse_config("id = \"x\"\n\n[grid]\nmass = -1.0\n"); });
    EXPECT_EQ(e.code(), "CFG_MASS");
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();

    e = config_error([] { parse_config("[grid]\nn_x = 64\nnx = 32\n"); });
    EXPECT_EQ(e.code(), "CFG_UNKNOWN_KEY");
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();

    EXPECT_EQ(config_error([] { parse_config("bogus = 1\n"); }).code(), "CFG_UNKNOWN_KEY");
    EXPECT_EQ(config_error([] { parse_config("[[perturbation]]\ncolour = 1\n"); }).code(), "CFG_UNKNOWN_KEY");
    EXPECT_EQ(config_error([] { parse_config("[grid]\nn_x = 64.0\n"); }).code(), "CFG_TYPE");
    EXPECT_EQ(config_error([] { parse_config("[grid]\nmass = \"heavy\"\n"); }).code(), "CFG_TYPE");
    EXPECT_EQ(config_error([] { parse_config("grid = 3\n"); }).code(), "CFG_TYPE");
    EXPECT_EQ(config_error([] { parse_config("[grid]\nn_x = 63\n"); }).code(), "CFG_NX");
    EXPECT_EQ(config_error([] { parse_config("[tolerances]\ngroup = 0.0\n"); }).code(), "CFG_TOLERANCE");
    EXPECT_EQ(config_error([] { parse_config("[tolerances]\ngruop = 1e-3\n"); }).code(), "CFG_UNKNOWN_KEY");
    EXPECT_EQ(config_error([] { parse_config("checks = [\"nope\"]\n"); }).code(), "CFG_CHECK");
    EXPECT_EQ(config_error([] { parse_config("[fock]\nk_max = 40\n"); }).code(), "CFG_KMAX");
    EXPECT_EQ(config_error([] { parse_config("[[perturbation]]\nkind = \"warp\"\n"); }).code(), "CFG_KIND");
    EXPECT_EQ(config_error([] { parse_config("[[perturbation]]\nr_x = -1.0\n"); }).code(), "CFG_RADIUS");
    EXPECT_EQ(config_error([] { parse_config("seed = -3\n"); }).code(), "CFG_SEED");
    EXPECT_EQ(config_error([] { parse_config("[slices]\nt_minus = 2.0\nt_plus = 1.0\n"); }).code(), "CFG_TIME");
    EXPECT_EQ(config_error([] { parse_config("[covariance]\ns = 50.0\n"); }).code(), "CFG_DIFFEO");
    EXPECT_EQ(config_error([] { resolve_checks(parse_config(""), {"validate", "nope"}); }).code(), "CFG_CHECK");
}

TEST(Config, CanonicalFormIsAFixpoint) {
    for (const char* name : {"canonical.toml", "flat.toml", "shale.toml", "causality.toml", "causality_spacelike.toml",
                             "covariance.toml", "locality.toml"}) {
        ScenarioConfig c = parse_config(scenario(name));
        std::string once = canonicalize(c);
        ScenarioConfig c2 = parse_config(once);
        EXPECT_EQ(canonicalize(c2), once) << name;
        EXPECT_EQ(config_hash(c2), config_hash(c)) << name;
    }
}

TEST(Config, HashTracksContentNotLayout) {
    ScenarioConfig a = parse_config("[grid]\nmass = 1.0\n");
    ScenarioConfig b = parse_config("# same thing\n[grid]\n  mass = 1   \n");
    ScenarioConfig c = parse_config("[grid]\nmass = 1.0000000000000002\n");
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ScenarioFilesParse) {
    ScenarioConfig c = parse_config(scenario("canonical.toml"));
    EXPECT_EQ(c.id, "canonical");
    ASSERT_EQ(c.perturbations.size(), 2u);
    EXPECT_DOUBLE_EQ(c.perturbations[1].shape.x0, 3.0);
    ScenarioConfig k = parse_config(scenario("causality_spacelike.toml"));
    EXPECT_TRUE(k.causality.present);
    EXPECT_TRUE(k.causality.grid_maps);
    EXPECT_EQ(k.causality.h2.size(), 1u);
    EXPECT_EQ(k.k_max, 7);
}

TEST(Run, FlatScenarioPassesAndIsWorkerIndependent) {
    ScenarioConfig c = parse_config("id = \"flat\"\n[fock]\nn_max = 4\n");
    std::vector<std::string> sel{"validate", "bogoliubov", "implementer", "holonomy", "sweep"};
    RunReport r1 = run(c, sel, 1), r2 = run(c, sel, 3);
    EXPECT_TRUE(r1.all_pass());
    for (const auto& ch : r1.checks) EXPECT_TRUE(ch.status == "pass" || ch.status == "skip") << ch.name;
    EXPECT_TRUE(golden_diff(r1.to_json(), r2.to_json()).empty());
    EXPECT_EQ(r1.to_json()["config_hash"], config_hash(c));
    EXPECT_EQ(r1.artifacts, std::vector<std::string>{"sweep.csv"});
}

TEST(Run, GoldenDiffIgnoresRuntimeOnly) {
    ScenarioConfig c = parse_config("[fock]\nn_max = 2\n");
    json a = run(c, {"validate", "bogoliubov"}).to_json();
    json b = a;
    b["checks"][0]["runtime_s"] = 123.0;
    EXPECT_TRUE(golden_diff(a, b).empty());
    double m = b["checks"][1]["measured"].get<double>();
    b["checks"][1]["measured"] = std::nextafter(m, 1.0);
    EXPECT_EQ(golden_diff(a, b).size(), 1u);
}

TEST(Run, InadmissibleMetricIsRejected) {
    ScenarioConfig c = parse_config("[[perturbation]]\namplitude = -1.5\n[fock]\nn_max = 2\n");
    RunReport r = run(c, {"validate", "bogoliubov"});
    EXPECT_EQ(r.checks[0].status, "fail");
    EXPECT_EQ(r.checks[1].status, "rejected");
    EXPECT_TRUE(r.any("rejected"));
    EXPECT_FALSE(r.all_pass());
}

TEST(Run, CausalityPreconditionRejects) {
    ScenarioConfig c = parse_config(R"(
[fock]
n_max = 2
[causality]
[[causality.h1]]
r_t = 1.0
r_x = 2.0
amplitude = 0.1
[[causality.h3]]
t0 = 0.5
x0 = 1.0
r_t = 1.0
r_x = 2.0
amplitude = 0.1
)");
    RunReport r = run(c, {"causality"});
    EXPECT_EQ(r.checks[0].status, "rejected");
    EXPECT_EQ(run(parse_config(""), {"causality"}).checks[0].status, "skip");
}
