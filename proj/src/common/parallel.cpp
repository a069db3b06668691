// Copyright 2026 The EFL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "efl/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace efl {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) {
  g_threads.store(n < 1 ? 1 : n);
}

int thread_count() { return g_threads.load(); }

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  int workers = thread_count();
  if (workers <= 1 || n < 2 * static_cast<size_t>(workers)) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t block = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    size_t lo = w * block;
    size_t hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace efl
