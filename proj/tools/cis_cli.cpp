#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "cis/cis.h"

namespace {

int exit_code(cis_status s) {
    switch (s) {
        case CIS_OK: return 0;
        case CIS_ERR_VALIDATION:
        case CIS_ERR_FACTORIZATION: return 2;
        case CIS_ERR_DEGENERACY: return 3;
        case CIS_ERR_NONCONVERGENCE: return 4;
        default: return 1;
    }
}

struct Flags {
    std::string config;
    uint64_t seed = 0;
    int threads = 1;
    std::string out;
    std::string projector;
    bool plot = false;
};

int run(cis_command cmd, const Flags& f, bool seed_given) {
    cis_config* cfg = nullptr;
    cis_status st = cis_config_load(f.config.c_str(), &cfg);
    if (st != CIS_OK) {
        std::fprintf(stderr, "error (%s): %s\n", cis_status_name(st), cis_last_error());
        return exit_code(st);
    }
    cis_run_options opt;
    cis_run_options_init(&opt);
    opt.has_seed = seed_given ? 1 : 0;
    opt.seed = f.seed;
    opt.threads = f.threads;
    opt.out_dir = f.out.empty() ? nullptr : f.out.c_str();
    opt.emit_plot_data = f.plot ? 1 : 0;
    opt.projector_path = f.projector.empty() ? nullptr : f.projector.c_str();

    cis_report* rep = nullptr;
    st = cis_run(cmd, cfg, &opt, &rep);
    cis_config_free(cfg);
    if (st != CIS_OK) {
        std::fprintf(stderr, "error (%s): %s\n", cis_status_name(st), cis_last_error());
        if (st == CIS_ERR_DEGENERACY && cmd == CIS_CMD_REDUCE)
            std::fprintf(stderr, "hint: the likelihood is too concentrated for plain iterative CIS; set method.name to \"cis-smc\"\n");
        return exit_code(st);
    }
    for (size_t i = 0; i < cis_report_line_count(rep); ++i) std::printf("%s\n", cis_report_line(rep, i));
    const int code = cis_report_passed(rep) ? 0 : 1;
    cis_report_free(rep);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Covariance-informed subspace reduction for Bayesian inverse problems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", cis_version());

    Flags f;
    struct Entry {
        const char* name;
        const char* help;
        cis_command cmd;
    };
    const Entry entries[] = {
        {"blg-check", "run the analytic linear-Gaussian check suite", CIS_CMD_BLG_CHECK},
        {"reduce", "build the informed subspace (cis, cis-smc or gis-fd)", CIS_CMD_REDUCE},
        {"sample", "sample the posterior with a saved projector", CIS_CMD_SAMPLE},
        {"compare", "compare covariance- and gradient-informed subspaces", CIS_CMD_COMPARE},
        {"diagnose", "weight, ESS and Hellinger diagnostics for a saved projector", CIS_CMD_DIAGNOSE},
    };
    std::vector<std::pair<CLI::App*, cis_command>> subs;
    for (const Entry& e : entries) {
        CLI::App* sub = app.add_subcommand(e.name, e.help);
        sub->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "override the config seed");
        sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", f.out, "output directory");
        sub->add_flag("--emit-plot-data", f.plot, "write figure-analog CSVs");
        if (e.cmd == CIS_CMD_SAMPLE || e.cmd == CIS_CMD_DIAGNOSE)
            sub->add_option("--projector", f.projector, "projector bundle (default <out>/projector.cisproj)");
        subs.emplace_back(sub, e.cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    for (const auto& [sub, cmd] : subs)
        if (sub->parsed()) return run(cmd, f, sub->get_option("--seed")->count() > 0);
    return 2;
}
