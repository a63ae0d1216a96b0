#include <cmath>
#include <cstdio>
#include <string>

#include "cis/cis.h"
#include "doctest.h"

namespace {

const double kIdentity2[4] = {1.0, 0.0, 0.0, 1.0};

std::string run_status(const char* json, cis_command cmd, const char* out_dir, cis_report** rep) {
    cis_config* cfg = nullptr;
    cis_status st = cis_config_parse(json, &cfg);
    if (st != CIS_OK) return cis_status_name(st);
    cis_run_options opt;
    cis_run_options_init(&opt);
    opt.out_dir = out_dir;
    st = cis_run(cmd, cfg, &opt, rep);
    cis_config_free(cfg);
    return cis_status_name(st);
}

}  // namespace

TEST_CASE("version and status names") {
    CHECK(std::string(cis_version()).size() > 0);
    CHECK(std::string(cis_status_name(CIS_OK)) == "ok");
    CHECK(std::string(cis_status_name(CIS_ERR_DEGENERACY)) == "degeneracy error");
    CHECK(std::string(cis_status_name(static_cast<cis_status>(99))) == "unknown status");
}

TEST_CASE("configuration errors map to status codes") {
    cis_config* cfg = nullptr;
    CHECK(cis_config_parse("{\"schema_version\": 1, \"problem\": {\"kind\": \"linear\"}, \"bogus\": 1}", &cfg) == CIS_ERR_VALIDATION);
    CHECK(cfg == nullptr);
    CHECK(std::string(cis_last_error()).find("bogus") != std::string::npos);
    CHECK(cis_config_parse("not json", &cfg) == CIS_ERR_VALIDATION);
    CHECK(cis_config_load("/nonexistent/cfg.json", &cfg) == CIS_ERR_IO);
    CHECK(cis_config_parse(nullptr, &cfg) == CIS_ERR_VALIDATION);
    CHECK(cis_config_parse("{\"schema_version\": 1, \"problem\": {\"kind\": \"linear\", \"n\": 2, \"m\": 1}}", &cfg) == CIS_OK);
    CHECK(std::string(cis_last_error()).empty());
    cis_report* rep = nullptr;
    cis_run_options opt;
    cis_run_options_init(&opt);
    opt.threads = 0;
    CHECK(cis_run(CIS_CMD_REDUCE, cfg, &opt, &rep) == CIS_ERR_VALIDATION);
    CHECK(cis_run(CIS_CMD_REDUCE, nullptr, nullptr, &rep) == CIS_ERR_VALIDATION);
    cis_config_free(cfg);
}

TEST_CASE("running commands through the C interface") {
    SUBCASE("linear-Gaussian check") {
        cis_report* rep = nullptr;
        const std::string st = run_status(R"({"schema_version": 1, "seed": 1,
            "problem": {"kind": "linear", "n": 3, "m": 2},
            "blg_check": {"instances": 3, "n_max": 5, "m_max": 3, "alternatives": 5}})",
                                          CIS_CMD_BLG_CHECK, "capi-out/blg", &rep);
        REQUIRE(st == "ok");
        CHECK(cis_report_passed(rep) == 1);
        CHECK(cis_report_line_count(rep) == 5);
        CHECK(cis_report_line(rep, 0) != nullptr);
        CHECK(cis_report_line(rep, 99) == nullptr);
        CHECK(std::string(cis_report_summary_json(rep)).find("\"blg-check\"") != std::string::npos);
        cis_report_free(rep);
    }
    SUBCASE("degenerate prior weights") {
        cis_report* rep = nullptr;
        const std::string st = run_status(R"({"schema_version": 1,
            "problem": {"kind": "linear", "F": [[1.0, 0.0]], "data": [2.0], "noise_std": 1e-6},
            "method": {"name": "cis", "n_init": 20}})",
                                          CIS_CMD_REDUCE, "capi-out/degenerate", &rep);
        CHECK(st == "degeneracy error");
        CHECK(rep == nullptr);
        CHECK(std::string(cis_last_error()).find("cis-smc") != std::string::npos);
    }
    SUBCASE("tempering stage limit") {
        cis_report* rep = nullptr;
        const std::string st = run_status(R"({"schema_version": 1,
            "problem": {"kind": "linear", "F": [[1.0, 0.0]], "data": [2.0], "noise_std": 1e-3},
            "method": {"name": "cis-smc", "max_stages": 1, "n_perp": 4}})",
                                          CIS_CMD_REDUCE, "capi-out/stages", &rep);
        CHECK(st == "non-convergence error");
    }
    SUBCASE("missing projector") {
        cis_report* rep = nullptr;
        const std::string st = run_status(R"({"schema_version": 1,
            "problem": {"kind": "linear", "n": 2, "m": 1},
            "sampler": {"n_steps": 10, "projector": "capi-out/none.cisproj"}})",
                                          CIS_CMD_SAMPLE, "capi-out/none", &rep);
        CHECK(st == "i/o error");
    }
}

TEST_CASE("projector handles") {
    const double c_hat[4] = {0.1, 0.0, 0.0, 1.0};
    cis_projector* p = nullptr;
    REQUIRE(cis_projector_compute(2, c_hat, kIdentity2, 1, &p) == CIS_OK);
    CHECK(cis_projector_dim(p) == 2);
    CHECK(cis_projector_rank(p) == 1);

    double ev[4] = {0, 0, 0, 0};
    size_t written = 0;
    CHECK(cis_projector_eigenvalues(p, ev, 4, &written) == CIS_OK);
    CHECK(written == 2);
    CHECK(ev[0] == doctest::Approx(0.1));
    CHECK(ev[1] == doctest::Approx(1.0));

    double v[4];
    CHECK(cis_projector_images(p, v) == CIS_OK);
    CHECK(std::abs(v[0]) == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(0.0));

    const double x[2] = {3.0, 4.0};
    double z = 0.0;
    CHECK(cis_projector_reduce(p, x, &z) == CIS_OK);
    CHECK(std::abs(z) == doctest::Approx(3.0));
    double defect = 1.0;
    CHECK(cis_projector_orthogonality_defect(p, &defect) == CIS_OK);
    CHECK(defect < 1e-12);

    REQUIRE(cis_projector_save(p, "capi-out/p.cisproj") == CIS_OK);
    cis_projector* q = nullptr;
    CHECK(cis_projector_load("capi-out/p.cisproj", 2, kIdentity2, &q) == CIS_OK);
    CHECK(cis_projector_rank(q) == 1);
    const double eye3[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    cis_projector* bad = nullptr;
    CHECK(cis_projector_load("capi-out/p.cisproj", 3, eye3, &bad) == CIS_ERR_VALIDATION);
    CHECK(cis_projector_load("capi-out/missing.cisproj", 2, kIdentity2, &bad) == CIS_ERR_IO);
    cis_projector_free(q);
    cis_projector_free(p);

    SUBCASE("default rank rule") {
        cis_projector* d = nullptr;
        CHECK(cis_projector_compute(2, c_hat, kIdentity2, -1, &d) == CIS_OK);
        CHECK(cis_projector_rank(d) == 1);
        cis_projector_free(d);
    }
    SUBCASE("invalid inputs") {
        cis_projector* e = nullptr;
        const double asym[4] = {1.0, 0.5, 0.0, 1.0};
        CHECK(cis_projector_compute(2, asym, kIdentity2, 1, &e) == CIS_ERR_VALIDATION);
        const double indefinite[4] = {1.0, 0.0, 0.0, -1.0};
        CHECK(cis_projector_compute(2, c_hat, indefinite, 1, &e) == CIS_ERR_FACTORIZATION);
        CHECK(cis_projector_compute(2, c_hat, kIdentity2, 3, &e) == CIS_ERR_VALIDATION);
        CHECK(cis_projector_compute(0, c_hat, kIdentity2, 1, &e) == CIS_ERR_VALIDATION);
        CHECK(e == nullptr);
        CHECK(cis_projector_images(nullptr, nullptr) == CIS_ERR_VALIDATION);
    }
}

TEST_CASE("principal angles through the C interface") {
    const double a[2] = {1.0, 0.0};
    const double b[2] = {std::cos(0.3), std::sin(0.3)};
    double out = 0.0;
    CHECK(cis_principal_angles(2, 1, a, 1, b, &out) == CIS_OK);
    CHECK(out == doctest::Approx(0.3));
    CHECK(cis_principal_angles(2, 0, a, 1, b, &out) == CIS_ERR_VALIDATION);
}
