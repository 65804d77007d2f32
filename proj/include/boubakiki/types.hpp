#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bk {

enum class ShapeClass { round, sharp };

inline std::string_view to_string(ShapeClass c) { return c == ShapeClass::round ? "round" : "sharp"; }

ShapeClass parse_shape_class(std::string_view s);

inline ShapeClass opposite(ShapeClass c) { return c == ShapeClass::round ? ShapeClass::sharp : ShapeClass::round; }

// Raised for malformed inputs: configs, manifests, mismatched records.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bk
