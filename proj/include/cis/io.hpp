#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cis/diagnostics.hpp"
#include "cis/linalg.hpp"
#include "cis/pipelines.hpp"
#include "cis/projector.hpp"

namespace cis {

struct CsvTable {
    std::vector<std::string> header;
    Matrix rows;
};

/// Comma-separated, one header line, values with 17 significant digits so
/// that reading back is lossless.
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// Text bundle holding V = [V_r, V_perp] and the pencil eigenvalues:
///
///   CISPROJ 1
///   <n> <r> <number of eigenvalues>
///   <eigenvalues>
///   one line per column of V (the first r are V_r)
struct ProjectorBundle {
    Eigen::Index n = 0;
    Eigen::Index r = 0;
    Vector eigenvalues;
    Matrix v;  // n x n
};

void save_projector(const std::filesystem::path& path, const Projector& proj);
ProjectorBundle load_projector_bundle(const std::filesystem::path& path);
/// Rebuilds the projector against a prior covariance; validates dimensions and
/// C_pi-orthonormality of U = C_pi^{-1} V.
Projector load_projector(const std::filesystem::path& path, const SpdMatrix& prior_cov);

/// One JSON object per line.
std::string record_to_json_line(const IterationRecord& rec);
void write_records(const std::filesystem::path& path, const std::vector<IterationRecord>& records);

/// Plain matrix file: first line "<rows>,<cols>", then one comma-separated
/// row per line.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace cis
