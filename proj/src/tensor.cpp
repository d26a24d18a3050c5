#include "cpcssl/tensor.hpp"

#include <sstream>

namespace cpcssl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::version: return "version";
    case ErrorCode::config: return "config";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::incompatible: return "incompatible";
    case ErrorCode::verification: return "verification";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw Error(ErrorCode::shape_mismatch, "negative dimension in " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

}  // namespace cpcssl
