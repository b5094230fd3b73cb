#ifndef HMLSTM_TRACE_HPP
#define HMLSTM_TRACE_HPP

#include <string>
#include <vector>

#include "hmlstm/cell.hpp"

namespace hmlstm {

// Time-major record of a read sequence: boundary states per detector layer
// (the top layer has none) plus hidden-state norms for every layer.
struct BoundaryTrace {
  int layers = 0;                           // L
  BoundaryMode mode = BoundaryMode::step;
  std::vector<double> z_init;               // L-1 carried-in boundary values
  std::vector<std::vector<double>> z;       // L-1 rows, z[l-1][t-1] = z^l_t
  std::vector<std::vector<double>> h_norm;  // L rows of ||h^l_t||_2
  std::vector<int> symbols;                 // the input window
  std::string text;                         // decoded input, set by vocab-aware callers

  int steps() const { return h_norm.empty() ? 0 : static_cast<int>(h_norm[0].size()); }
};

}  // namespace hmlstm

#endif
