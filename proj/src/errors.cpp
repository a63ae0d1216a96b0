#include "cis/errors.hpp"

#include <sstream>

namespace cis {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::validation: return "validation";
        case ErrorKind::factorization: return "factorization";
        case ErrorKind::degeneracy: return "degeneracy";
        case ErrorKind::non_convergence: return "non-convergence";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

namespace {
std::string with_ess(const std::string& what, double ess) {
    std::ostringstream os;
    os << what << " (ESS = " << ess << ")";
    return os.str();
}
}  // namespace

DegeneracyError::DegeneracyError(const std::string& what, double ess)
    : Error(ErrorKind::degeneracy, with_ess(what, ess)), ess_(ess) {}

}  // namespace cis
