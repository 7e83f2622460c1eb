#pragma once

#include <string>

namespace pathpt {

// Fixed-point text with `digits` decimals; "nan" and "inf"/"-inf" otherwise.
// Locale-independent, so reports are byte-identical across runs.
std::string format_fixed(double value, int digits = 6);

}  // namespace pathpt
