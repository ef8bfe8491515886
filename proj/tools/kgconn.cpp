// kgconn: run scenario checks and write JSON/CSV reports.
//
//   kgconn report --config scenarios/canonical.toml --out out/ --golden scenarios/golden/canonical.json
//
// Exit codes: 0 all checks pass, 1 a check failed or the golden file differs,
// 2 usage or config error, 3 internal error.

#include "kgconn/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace kgconn;

enum Exit { ok = 0, check_failed = 1, usage = 2, internal = 3 };

const std::map<std::string, std::vector<std::string>>& subcommand_checks() {
    static const std::map<std::string, std::vector<std::string>> m{
        {"validate", {"validate"}},
        {"evolve", {"evolve"}},
        {"bogoliubov", {"bogoliubov", "shale"}},
        {"implement", {"implementer"}},
        {"axioms", {"covariance", "locality", "causality", "holonomy"}},
        {"stress", {"stress"}},
        {"sweep", {"sweep"}},
        {"report", {}},
    };
    return m;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("CFG_IO", "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Options {
    std::vector<std::string> configs;
    std::vector<std::string> checks;
    std::string out, golden;
    int workers = 1;
    std::optional<std::uint64_t> seed;
};

int run_command(const std::string& sub, const Options& o) {
    std::vector<ScenarioConfig> configs;
    std::vector<std::vector<std::string>> selections;
    for (const auto& path : o.configs) {
        ScenarioConfig c;
        try {
            c = parse_config(read_file(path));
        } catch (const ConfigError& e) {
            std::cerr << path << ": " << e.what() << "\n";
            return usage;
        }
        if (o.seed) c.seed = *o.seed;
        std::vector<std::string> sel = o.checks.empty() ? subcommand_checks().at(sub) : o.checks;
        selections.push_back(resolve_checks(c, sel));
        configs.push_back(std::move(c));
    }
    if (!o.golden.empty() && configs.size() != 1) {
        std::cerr << "--golden needs exactly one --config\n";
        return usage;
    }

    std::vector<RunReport> reports = run_scenarios(configs, selections, o.workers);

    int code = ok;
    auto raise = [&](int c) { code = std::max(code, c); };
    for (const auto& r : reports) {
        for (const auto& c : r.checks) {
            std::printf("%-16s %-12s %-8s measured=%.6g tol=%.3g (%.2fs)\n", r.scenario.c_str(), c.name.c_str(),
                        c.status.c_str(), c.measured, c.tolerance, c.runtime_s);
            if (c.status == "fail") raise(check_failed);
            if (c.status == "rejected") {
                std::cerr << r.scenario << "/" << c.name << ": " << c.details.value("reason", "") << "\n";
                raise(usage);
            }
            if (c.status == "error") {
                std::cerr << r.scenario << "/" << c.name << ": " << c.details.value("error", "") << "\n";
                raise(internal);
            }
        }
        if (!o.out.empty()) {
            std::filesystem::path dir = o.out;
            if (reports.size() > 1) dir /= r.scenario;
            write_report(r, dir);
        }
    }

    if (!o.golden.empty()) {
        json report = reports.front().to_json();
        if (!std::filesystem::exists(o.golden)) {
            // First certified run: only a fully passing report becomes the golden file.
            if (code != ok) {
                std::cerr << "not writing golden file from a failing run\n";
                return code;
            }
            if (auto parent = std::filesystem::path(o.golden).parent_path(); !parent.empty())
                std::filesystem::create_directories(parent);
            std::ofstream(o.golden) << report.dump(2) << "\n";
            std::cerr << "wrote golden file " << o.golden << "\n";
        } else {
            json golden;
            try {
                golden = json::parse(read_file(o.golden));
            } catch (const json::exception& e) {
                std::cerr << o.golden << ": " << e.what() << "\n";
                return usage;
            }
            auto diff = golden_diff(report, golden);
            for (const auto& d : diff) std::cerr << "golden mismatch: " << d << "\n";
            std::printf("golden %s\n", diff.empty() ? "match" : "MISMATCH");
            if (!diff.empty()) raise(check_failed);
        }
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scattering-connection checks for Klein-Gordon fields on perturbed cylinders"};
    app.require_subcommand(1);
    Options o;
    std::string chosen;
    for (const auto& [name, checks] : subcommand_checks()) {
        std::string help = name == "report" ? "run the config's checks (default: all)"
                                            : "run " + CLI::detail::join(checks, ", ");
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.configs, "scenario TOML file (repeatable)")->required()->check(CLI::ExistingFile);
        sub->add_option("--check", o.checks, "comma-separated check names, overrides the subcommand set")->delimiter(',');
        sub->add_option("--out", o.out, "directory for report.json and CSVs");
        sub->add_option("--workers", o.workers, "worker threads")->check(CLI::Range(1, 256));
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--golden", o.golden, "golden report to compare against (written if absent and all pass)");
        sub->callback([&chosen, name = name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }
    try {
        return run_command(chosen, o);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal;
    }
}
