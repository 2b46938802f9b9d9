#include "dprgmi/matrix.hpp"

#include <cmath>
#include <string>

namespace dprgmi {

bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void require_binary(const Matrix& labels, const char* what) {
    for (double v : labels.data) {
        if (v != 0.0 && v != 1.0) {
            throw ConfigError(std::string(what) + ": labels must be 0 or 1");
        }
    }
}

}  // namespace dprgmi
