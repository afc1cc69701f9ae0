#include "forgeloc/version.hpp"

namespace forgeloc {

std::string version_string() { return FORGELOC_VERSION; }

}  // namespace forgeloc
