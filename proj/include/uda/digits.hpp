#pragma once

#include <cstdint>

#include "uda/data.hpp"

namespace uda {

/// Procedurally rendered handwriting-like digits: light strokes on a dark
/// canvas, with per-sample jitter of the control points, a random affine
/// pose and stroke width. Labels are uniform over 0..9.
LabeledSet render_digits(std::size_t count, std::uint64_t seed, std::size_t size = 32);

}  // namespace uda
