#pragma once

#include <string>

namespace forgeloc {

/// Library version, e.g. "0.1.0".
std::string version_string();

}  // namespace forgeloc
