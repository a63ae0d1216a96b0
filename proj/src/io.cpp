#include "cis/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cis/errors.hpp"

namespace cis {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    return is;
}

double parse_double(const std::string& tok, const std::filesystem::path& path) {
    // strtod rather than stod: subnormal values set ERANGE but are valid
    const char* begin = tok.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (tok.empty() || end != begin + tok.size() || !std::isfinite(v))
        throw IoError(path.string() + ": malformed number '" + tok + "'");
    return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    if (!table.header.empty() && static_cast<Eigen::Index>(table.header.size()) != table.rows.cols())
        throw ValidationError("write_csv: header width does not match the data");
    std::ofstream os = open_out(path);
    for (std::size_t j = 0; j < table.header.size(); ++j) os << (j ? "," : "") << table.header[j];
    os << '\n';
    for (Eigen::Index i = 0; i < table.rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < table.rows.cols(); ++j) os << (j ? "," : "") << fmt(table.rows(i, j));
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw IoError(path.string() + ": empty file");
    t.header = split(line, ',');
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto toks = split(line, ',');
        if (toks.size() != t.header.size()) throw IoError(path.string() + ": row width differs from header");
        std::vector<double> row;
        for (const auto& tok : toks) row.push_back(parse_double(tok, path));
        rows.push_back(std::move(row));
    }
    t.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) t.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return t;
}

void save_projector(const std::filesystem::path& path, const Projector& proj) {
    std::ofstream os = open_out(path);
    const Vector& ev = proj.eigenvalues();
    os << "CISPROJ 1\n" << proj.dim() << ' ' << proj.rank() << ' ' << ev.size() << '\n';
    for (Eigen::Index i = 0; i < ev.size(); ++i) os << (i ? " " : "") << fmt(ev(i));
    os << '\n';
    const Matrix& v = proj.images();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        for (Eigen::Index i = 0; i < v.rows(); ++i) os << (i ? " " : "") << fmt(v(i, j));
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

ProjectorBundle load_projector_bundle(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != "CISPROJ" || version != 1) throw IoError(path.string() + ": not a projector bundle (bad header)");
    ProjectorBundle b;
    Eigen::Index n_ev = 0;
    if (!(is >> b.n >> b.r >> n_ev) || b.n < 1 || b.r < 0 || b.r > b.n || n_ev < 0)
        throw IoError(path.string() + ": bad bundle dimensions");
    auto next = [&]() {
        std::string tok;
        if (!(is >> tok)) throw IoError(path.string() + ": truncated bundle");
        return parse_double(tok, path);
    };
    b.eigenvalues.resize(n_ev);
    for (Eigen::Index i = 0; i < n_ev; ++i) b.eigenvalues(i) = next();
    b.v.resize(b.n, b.n);
    for (Eigen::Index j = 0; j < b.n; ++j)
        for (Eigen::Index i = 0; i < b.n; ++i) b.v(i, j) = next();
    std::string extra;
    if (is >> extra) throw IoError(path.string() + ": trailing data in bundle");
    return b;
}

Projector load_projector(const std::filesystem::path& path, const SpdMatrix& prior_cov) {
    ProjectorBundle b = load_projector_bundle(path);
    if (b.n != prior_cov.dim()) {
        std::ostringstream os;
        os << "projector dimension " << b.n << " does not match the problem dimension " << prior_cov.dim();
        throw ValidationError(os.str());
    }
    return Projector::from_images(b.v, b.r, prior_cov, std::move(b.eigenvalues));
}

std::string record_to_json_line(const IterationRecord& rec) {
    nlohmann::json j;
    j["iteration"] = rec.iteration;
    j["beta"] = rec.beta;
    j["rank"] = rec.rank;
    j["r_max"] = rec.r_max;
    j["eigenvalues"] = to_json(rec.eigenvalues);
    j["angles"] = to_json(rec.angles);
    j["ess"] = rec.ess;
    j["samples_used"] = rec.samples_used;
    j["acceptance"] = rec.acceptance;
    j["evaluations"] = rec.evaluations;
    if (rec.bound) {
        j["bound"] = {{"e_sqrt_w", rec.bound->e_sqrt_w},
                      {"var_sqrt_w", rec.bound->var_sqrt_w},
                      {"e_cond_var_w", rec.bound->e_cond_var_w},
                      {"n_mc", rec.bound->n_mc},
                      {"hellinger_sq_bound", rec.bound->hellinger_sq_bound},
                      {"clipped", rec.bound->clipped}};
    } else {
        j["bound"] = nullptr;
    }
    return j.dump();
}

void write_records(const std::filesystem::path& path, const std::vector<IterationRecord>& records) {
    std::ofstream os = open_out(path);
    for (const auto& rec : records) os << record_to_json_line(rec) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream os = open_out(path);
    os << m.rows() << ',' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << fmt(m(i, j));
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    std::string line;
    if (!std::getline(is, line)) throw IoError(path.string() + ": empty file");
    const auto dims = split(line, ',');
    if (dims.size() != 2) throw IoError(path.string() + ": first line must be '<rows>,<cols>'");
    const double rows_d = parse_double(dims[0], path), cols_d = parse_double(dims[1], path);
    if (rows_d < 1 || cols_d < 1 || rows_d != std::floor(rows_d) || cols_d != std::floor(cols_d))
        throw IoError(path.string() + ": bad dimensions");
    const auto rows = static_cast<Eigen::Index>(rows_d), cols = static_cast<Eigen::Index>(cols_d);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (!std::getline(is, line)) throw IoError(path.string() + ": fewer rows than declared");
        const auto toks = split(line, ',');
        if (static_cast<Eigen::Index>(toks.size()) != cols) throw IoError(path.string() + ": row width differs from declared");
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = parse_double(toks[static_cast<std::size_t>(j)], path);
    }
    return m;
}

}  // namespace cis
