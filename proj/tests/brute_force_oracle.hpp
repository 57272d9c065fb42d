// Copyright 2026 The oodshift Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Brute-force shift values of a discrete latent spec, computed from the
// joint tables P(z, y) and Q(z, y) in long double.

#pragma once

#include <cmath>
#include <utility>

#include "oodshift/datagen.hpp"

namespace oodshift::testing {

inline std::pair<double, double> brute_force_shift(const LatentSpec& s) {
  long double div = 0, cor = 0;
  for (std::size_t z = 0; z < s.support.size(); ++z) {
    const long double pz = s.p_z[z], qz = s.q_z[z];
    if (pz == 0 || qz == 0) {
      div += pz + qz;
      continue;
    }
    for (std::size_t y = 0; y < s.p_y_given_z[z].size(); ++y) {
      const long double pj = pz * s.p_y_given_z[z][y];
      const long double qj = qz * s.q_y_given_z[z][y];
      cor += std::fabs(pj * std::sqrt(qz / pz) - qj * std::sqrt(pz / qz));
    }
  }
  return {static_cast<double>(div / 2), static_cast<double>(cor / 2)};
}

}  // namespace oodshift::testing
