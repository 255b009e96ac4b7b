#include "xbm/util/error.hpp"

namespace xbm {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::shape: return "shape";
    case ErrorKind::state: return "state";
    case ErrorKind::io: return "io";
    case ErrorKind::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

}  // namespace xbm
