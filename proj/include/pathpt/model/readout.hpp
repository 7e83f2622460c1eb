#pragma once

#include <span>
#include <vector>

#include "pathpt/tensor.hpp"

namespace pathpt::model {

inline constexpr double kDefaultTemperature = 0.07;

// Divides each row by its L2 norm. Throws InvalidInput on a zero-norm row.
Matrix normalize_rows(Matrix m);

// Cosine similarity of every feature row against every (unit) class row.
// Throws InvalidInput on a zero-norm feature row.
Matrix cosine_scores(const Matrix& features, const Matrix& class_rows);

// Row m = softmax_j(cos(v_m, E_j) / tau). Throws InvalidInput when tau <= 0
// or a feature row has zero norm.
Matrix tile_probabilities(const Matrix& features, const Matrix& class_rows, double tau);

// Row-wise softmax of scores / tau.
Matrix softmax_scaled(const Matrix& scores, double tau);

// Row-wise argmax; ties resolve to the lowest column.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace pathpt::model
