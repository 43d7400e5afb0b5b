/*=========================================================================
 *
 *  Copyright the geomatch authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         http://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#include "geomatch/core.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace geomatch {

int worker_cap() {
  static const int cap = [] {
    const char* env = std::getenv("GEOMATCH_THREADS");
    if (!env) return 0;
    const int v = std::atoi(env);
    return v < 0 ? 0 : v;
  }();
  return cap;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int cap = worker_cap();
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = cap <= 0 ? 1 : std::min<std::size_t>({std::size_t(cap), hw, n});
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    const std::size_t chunk = 16;
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n) return;
      const std::size_t end = std::min(n, begin + chunk);
      for (std::size_t i = begin; i < end; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
}

double eval_cell_grid(const std::vector<double>& values, int n, Vec2 x) {
  const double h = 1.0 / n;
  // continuous index in cell-center coordinates
  auto clampd = [](double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); };
  const double fx = clampd(x.x / h - 0.5, 0.0, double(n - 1));
  const double fy = clampd(x.y / h - 0.5, 0.0, double(n - 1));
  const int i0 = std::min(n - 2, int(fx));
  const int j0 = std::min(n - 2, int(fy));
  const double tx = fx - i0;
  const double ty = fy - j0;
  const auto at = [&](int i, int j) { return values[i + n * j]; };
  return (1 - tx) * (1 - ty) * at(i0, j0) + tx * (1 - ty) * at(i0 + 1, j0) +
         (1 - tx) * ty * at(i0, j0 + 1) + tx * ty * at(i0 + 1, j0 + 1);
}

}  // namespace geomatch
