#include "cis/cis.h"

#include <new>
#include <string>
#include <vector>

#include "cis/errors.hpp"
#include "cis/experiment.hpp"
#include "cis/io.hpp"
#include "cis/reduction.hpp"

struct cis_config {
    cis::ExperimentConfig cfg;
};

struct cis_report {
    cis::CommandReport rep;
    std::string summary_text;
};

struct cis_projector {
    cis::Projector proj;
};

namespace {

thread_local std::string last_error;

cis_status fail(cis_status status, const std::string& msg) {
    last_error = msg;
    return status;
}

cis_status status_of(cis::ErrorKind kind) {
    switch (kind) {
        case cis::ErrorKind::validation: return CIS_ERR_VALIDATION;
        case cis::ErrorKind::factorization: return CIS_ERR_FACTORIZATION;
        case cis::ErrorKind::degeneracy: return CIS_ERR_DEGENERACY;
        case cis::ErrorKind::non_convergence: return CIS_ERR_NONCONVERGENCE;
        case cis::ErrorKind::io: return CIS_ERR_IO;
    }
    return CIS_ERR_INTERNAL;
}

template <class F>
cis_status guarded(F&& f) {
    try {
        last_error.clear();
        f();
        return CIS_OK;
    } catch (const cis::DegeneracyError& e) {
        return fail(CIS_ERR_DEGENERACY, e.what());
    } catch (const cis::Error& e) {
        return fail(status_of(e.kind()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(CIS_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(CIS_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(CIS_ERR_INTERNAL, "unknown error");
    }
}

cis::Matrix map_square(size_t n, const double* data) {
    const auto k = static_cast<Eigen::Index>(n);
    return Eigen::Map<const cis::Matrix>(data, k, k);
}

}  // namespace

extern "C" {

const char* cis_version(void) { return "1.0.0"; }

const char* cis_status_name(cis_status status) {
    switch (status) {
        case CIS_OK: return "ok";
        case CIS_ERR_INTERNAL: return "internal error";
        case CIS_ERR_VALIDATION: return "validation error";
        case CIS_ERR_DEGENERACY: return "degeneracy error";
        case CIS_ERR_NONCONVERGENCE: return "non-convergence error";
        case CIS_ERR_FACTORIZATION: return "factorization error";
        case CIS_ERR_IO: return "i/o error";
    }
    return "unknown status";
}

const char* cis_last_error(void) { return last_error.c_str(); }

cis_status cis_config_load(const char* path, cis_config** out) {
    if (!path || !out) return fail(CIS_ERR_VALIDATION, "cis_config_load: null argument");
    return guarded([&] { *out = new cis_config{cis::load_config(path)}; });
}

cis_status cis_config_parse(const char* json_text, cis_config** out) {
    if (!json_text || !out) return fail(CIS_ERR_VALIDATION, "cis_config_parse: null argument");
    return guarded([&] { *out = new cis_config{cis::parse_config_text(json_text)}; });
}

void cis_config_free(cis_config* cfg) { delete cfg; }

void cis_run_options_init(cis_run_options* opt) {
    if (!opt) return;
    *opt = cis_run_options{0, 0, 1, nullptr, 0, nullptr};
}

cis_status cis_run(cis_command command, const cis_config* cfg, const cis_run_options* opt, cis_report** out) {
    if (!cfg || !out) return fail(CIS_ERR_VALIDATION, "cis_run: null argument");
    cis::RunOptions ro;
    if (opt) {
        if (opt->threads < 1) return fail(CIS_ERR_VALIDATION, "threads must be >= 1");
        if (opt->has_seed) ro.seed = opt->seed;
        ro.threads = static_cast<std::size_t>(opt->threads);
        if (opt->out_dir) ro.out_dir = opt->out_dir;
        ro.emit_plot_data = opt->emit_plot_data != 0;
        if (opt->projector_path) ro.projector_path = opt->projector_path;
    }
    return guarded([&] {
        cis::CommandReport rep;
        switch (command) {
            case CIS_CMD_BLG_CHECK: rep = cis::cmd_blg_check(cfg->cfg, ro); break;
            case CIS_CMD_REDUCE: rep = cis::cmd_reduce(cfg->cfg, ro); break;
            case CIS_CMD_SAMPLE: rep = cis::cmd_sample(cfg->cfg, ro); break;
            case CIS_CMD_COMPARE: rep = cis::cmd_compare(cfg->cfg, ro); break;
            case CIS_CMD_DIAGNOSE: rep = cis::cmd_diagnose(cfg->cfg, ro); break;
            default: throw cis::ValidationError("unknown command");
        }
        std::string text = rep.summary.dump();
        *out = new cis_report{std::move(rep), std::move(text)};
    });
}

int cis_report_passed(const cis_report* rep) { return rep && rep->rep.passed ? 1 : 0; }

size_t cis_report_line_count(const cis_report* rep) { return rep ? rep->rep.lines.size() : 0; }

const char* cis_report_line(const cis_report* rep, size_t i) {
    if (!rep || i >= rep->rep.lines.size()) return nullptr;
    return rep->rep.lines[i].c_str();
}

const char* cis_report_summary_json(const cis_report* rep) { return rep ? rep->summary_text.c_str() : nullptr; }

void cis_report_free(cis_report* rep) { delete rep; }

cis_status cis_projector_compute(size_t n, const double* c_hat, const double* prior_cov, int rank, cis_projector** out) {
    if (!c_hat || !prior_cov || !out || n == 0) return fail(CIS_ERR_VALIDATION, "cis_projector_compute: invalid argument");
    return guarded([&] {
        const cis::SpdMatrix prior(map_square(n, prior_cov));
        const cis::Matrix c = map_square(n, c_hat);
        if (rank < 0) {
            cis::RankRule rule;
            rule.r_max = std::min<Eigen::Index>(rule.r_max, static_cast<Eigen::Index>(n));
            rule.r_min = std::min(rule.r_min, rule.r_max);
            *out = new cis_projector{cis::cis_projector(c, prior, rule).projector};
        } else {
            *out = new cis_projector{cis::cis_projector(c, prior, static_cast<Eigen::Index>(rank)).projector};
        }
    });
}

cis_status cis_projector_load(const char* path, size_t n, const double* prior_cov, cis_projector** out) {
    if (!path || !prior_cov || !out || n == 0) return fail(CIS_ERR_VALIDATION, "cis_projector_load: invalid argument");
    return guarded([&] { *out = new cis_projector{cis::load_projector(path, cis::SpdMatrix(map_square(n, prior_cov)))}; });
}

cis_status cis_projector_save(const cis_projector* proj, const char* path) {
    if (!proj || !path) return fail(CIS_ERR_VALIDATION, "cis_projector_save: null argument");
    return guarded([&] { cis::save_projector(path, proj->proj); });
}

size_t cis_projector_dim(const cis_projector* proj) { return proj ? static_cast<size_t>(proj->proj.dim()) : 0; }

size_t cis_projector_rank(const cis_projector* proj) { return proj ? static_cast<size_t>(proj->proj.rank()) : 0; }

cis_status cis_projector_images(const cis_projector* proj, double* out) {
    if (!proj || !out) return fail(CIS_ERR_VALIDATION, "cis_projector_images: null argument");
    const auto& v = proj->proj.images();
    Eigen::Map<cis::Matrix>(out, v.rows(), v.cols()) = v;
    return CIS_OK;
}

cis_status cis_projector_eigenvalues(const cis_projector* proj, double* out, size_t len, size_t* written) {
    if (!proj || (!out && len > 0)) return fail(CIS_ERR_VALIDATION, "cis_projector_eigenvalues: null argument");
    const auto& ev = proj->proj.eigenvalues();
    const size_t k = std::min(len, static_cast<size_t>(ev.size()));
    for (size_t i = 0; i < k; ++i) out[i] = ev(static_cast<Eigen::Index>(i));
    if (written) *written = k;
    return CIS_OK;
}

cis_status cis_projector_reduce(const cis_projector* proj, const double* x, double* out) {
    if (!proj || !x || (!out && proj->proj.rank() > 0)) return fail(CIS_ERR_VALIDATION, "cis_projector_reduce: null argument");
    return guarded([&] {
        const cis::Vector z = proj->proj.reduce_r(Eigen::Map<const cis::Vector>(x, proj->proj.dim()));
        for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = z(i);
    });
}

cis_status cis_projector_orthogonality_defect(const cis_projector* proj, double* out) {
    if (!proj || !out) return fail(CIS_ERR_VALIDATION, "cis_projector_orthogonality_defect: null argument");
    return guarded([&] { *out = proj->proj.orthogonality_defect(); });
}

void cis_projector_free(cis_projector* proj) { delete proj; }

cis_status cis_principal_angles(size_t n, size_t ka, const double* a, size_t kb, const double* b, double* out) {
    if (!a || !b || !out || n == 0 || ka == 0 || kb == 0) return fail(CIS_ERR_VALIDATION, "cis_principal_angles: invalid argument");
    return guarded([&] {
        const auto rows = static_cast<Eigen::Index>(n);
        const cis::Vector th = cis::principal_angles(Eigen::Map<const cis::Matrix>(a, rows, static_cast<Eigen::Index>(ka)),
                                                     Eigen::Map<const cis::Matrix>(b, rows, static_cast<Eigen::Index>(kb)));
        for (Eigen::Index i = 0; i < th.size(); ++i) out[i] = th(i);
    });
}

}  // extern "C"
