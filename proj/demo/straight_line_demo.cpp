// Copyright 2026 The flowforge Authors
//
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

// Builds the triangular map from a sine-modulated density to the uniform
// density on [0,1], realizes it with the straight-line velocity field and
// compares kinetic energies of a few time reparametrizations.

#include "flowforge/flowforge.hpp"

#include <cstdio>

int main() {
  using namespace flowforge;
  const auto source = GridDensity::sine1d(257);
  const auto target = GridDensity::uniform(1, 257);
  const TriangularMap map(source, target);
  const StraightLineField field(map);
  const IntegratorConfig cfg{100};

  std::printf("%8s %12s %12s %12s %12s\n", "x", "T(x)", "X(x,1)", "log det", "r(1)");
  for (double x : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    const Vec x0 = Vec::Constant(1, x);
    const auto s = integrate_augmented(field, x0, cfg);
    std::printf("%8.3f %12.8f %12.8f %12.8f %12.3e\n", x, map(x0)[0], s.x[0], s.log_det(),
                s.r);
  }

  const double ke = kinetic_energy(field, source, cfg, 128);
  std::printf("\nkinetic energy, s(t) = t      : %.8f\n", ke);
  for (const auto& p : {TimeProfile::quadratic(), TimeProfile::sine(), TimeProfile::cubic()}) {
    const StraightLineField alt(map, p);
    const double e = kinetic_energy(alt, source, cfg, 128);
    std::printf("kinetic energy, %-13s : %.8f  (ratio %.4f)\n", p.name.c_str(), e, e / ke);
  }
  return 0;
}
