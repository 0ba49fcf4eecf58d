#include "carve/error.hpp"

namespace carve {

const char* to_string(ParseErrorKind kind) noexcept {
  switch (kind) {
    case ParseErrorKind::BadMagic: return "bad magic";
    case ParseErrorKind::UnsupportedVersion: return "unsupported version";
    case ParseErrorKind::BadHeader: return "bad header";
    case ParseErrorKind::Truncated: return "truncated payload";
    case ParseErrorKind::TrailingBytes: return "trailing bytes";
    case ParseErrorKind::NonContiguousSteps: return "non-contiguous steps";
    case ParseErrorKind::DuplicateKey: return "duplicate key";
    case ParseErrorKind::InvalidWeight: return "invalid weight";
    case ParseErrorKind::ZeroMap: return "zero map";
    case ParseErrorKind::BadImage: return "bad image";
    case ParseErrorKind::BadCsv: return "bad csv";
  }
  return "parse error";
}

}  // namespace carve
