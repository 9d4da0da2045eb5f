#include "sed/errors.hpp"

namespace sed {

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

}  // namespace sed
