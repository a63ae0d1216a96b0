#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "cis/errors.hpp"
#include "cis/io.hpp"
#include "cis/reduction.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

using namespace cis;
using namespace cis::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cis_test_io";
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream os(p);
    os << s;
}

}  // namespace

TEST_CASE("csv tables round trip losslessly") {
    Rng rng = make_stream(400, 0);
    CsvTable t{{"a", "b", "c"}, random_matrix(rng, 7, 3)};
    t.rows(0, 0) = 1e-300;
    t.rows(1, 1) = -123456.789012345678;
    t.rows(2, 2) = std::numeric_limits<double>::denorm_min();
    const fs::path p = scratch("table.csv");
    write_csv(p, t);
    const CsvTable back = read_csv(p);
    CHECK(back.header == t.header);
    REQUIRE(back.rows.rows() == 7);
    CHECK(back.rows == t.rows);

    CHECK_THROWS_AS(write_csv(p, CsvTable{{"a"}, Matrix::Zero(2, 2)}), ValidationError);
    CHECK_THROWS_AS(read_csv(scratch("missing.csv")), IoError);
    write_text(scratch("ragged.csv"), "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(read_csv(scratch("ragged.csv")), IoError);
    write_text(scratch("junk.csv"), "a\n1x\n");
    CHECK_THROWS_AS(read_csv(scratch("junk.csv")), IoError);
}

TEST_CASE("matrix files round trip losslessly") {
    Rng rng = make_stream(401, 0);
    const Matrix m = random_matrix(rng, 4, 6) * 1e7;
    const fs::path p = scratch("m.csv");
    write_matrix_csv(p, m);
    CHECK(read_matrix_csv(p) == m);
    write_text(scratch("short.csv"), "3,2\n1,2\n");
    CHECK_THROWS_AS(read_matrix_csv(scratch("short.csv")), IoError);
    write_text(scratch("dims.csv"), "3\n");
    CHECK_THROWS_AS(read_matrix_csv(scratch("dims.csv")), IoError);
}

TEST_CASE("projector bundles") {
    Rng rng = make_stream(402, 0);
    const Eigen::Index n = 5;
    const SpdMatrix prior(random_spd(rng, n));
    const PencilProjector pp = cis_projector(random_spd(rng, n), prior, 2);
    const fs::path p = scratch("proj.cisproj");
    save_projector(p, pp.projector);

    SUBCASE("round trip") {
        const ProjectorBundle b = load_projector_bundle(p);
        CHECK(b.n == n);
        CHECK(b.r == 2);
        CHECK(b.eigenvalues == pp.projector.eigenvalues());
        CHECK(b.v == pp.projector.images());
        const Projector back = load_projector(p, prior);
        CHECK(back.rank() == 2);
        CHECK((back.pi() - pp.projector.pi()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((back.basis() - pp.projector.basis()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("wrong prior is rejected") {
        CHECK_THROWS_AS(load_projector(p, SpdMatrix::identity(n + 1)), ValidationError);
        CHECK_THROWS_AS(load_projector(p, SpdMatrix(4.0 * prior.matrix())), ValidationError);
    }
    SUBCASE("malformed files") {
        write_text(scratch("bad_magic.cisproj"), "NOTPROJ 1\n1 1 0\n1\n");
        CHECK_THROWS_AS(load_projector_bundle(scratch("bad_magic.cisproj")), IoError);
        write_text(scratch("truncated.cisproj"), "CISPROJ 1\n2 1 0\n1 0\n");
        CHECK_THROWS_AS(load_projector_bundle(scratch("truncated.cisproj")), IoError);
        write_text(scratch("trailing.cisproj"), "CISPROJ 1\n1 1 0\n1\n2\n");
        CHECK_THROWS_AS(load_projector_bundle(scratch("trailing.cisproj")), IoError);
        write_text(scratch("rank.cisproj"), "CISPROJ 1\n1 2 0\n1\n");
        CHECK_THROWS_AS(load_projector_bundle(scratch("rank.cisproj")), IoError);
        CHECK_THROWS_AS(load_projector_bundle(scratch("nothing.cisproj")), IoError);
    }
}

TEST_CASE("iteration records serialize to one JSON object per line") {
    IterationRecord rec;
    rec.iteration = 3;
    rec.beta = 0.25;
    rec.rank = 2;
    rec.eigenvalues = (Vector(3) << 0.1, 0.5, 1.0).finished();
    rec.angles = (Vector(2) << 0.01, 0.02).finished();
    rec.evaluations = 12345;
    BoundEstimate b;
    b.e_sqrt_w = 0.9;
    rec.bound = b;
    const std::string line = record_to_json_line(rec);
    CHECK(line.find('\n') == std::string::npos);
    const auto j = nlohmann::json::parse(line);
    CHECK(j["iteration"] == 3);
    CHECK(j["beta"].get<double>() == 0.25);
    CHECK(j["eigenvalues"].size() == 3);
    CHECK(j["angles"][1].get<double>() == 0.02);
    CHECK(j["evaluations"] == 12345);
    CHECK(j["bound"]["e_sqrt_w"].get<double>() == 0.9);

    IterationRecord bare;
    CHECK(nlohmann::json::parse(record_to_json_line(bare))["bound"].is_null());

    const fs::path p = scratch("records.jsonl");
    write_records(p, {rec, bare, rec});
    std::ifstream is(p);
    std::string l;
    int count = 0;
    while (std::getline(is, l)) {
        CHECK(nlohmann::json::parse(l).is_object());
        ++count;
    }
    CHECK(count == 3);
}
