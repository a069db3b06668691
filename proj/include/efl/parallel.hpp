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

#ifndef EFL_PARALLEL_HPP
#define EFL_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace efl {

// Global worker count for parallel_for. 1 disables threading.
// Every parallel loop in this codebase assigns each output element to a
// single worker, so results are bit-identical for any thread count.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Partitioning is by contiguous blocks; fn must
// only write state owned by index i.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace efl

#endif  // EFL_PARALLEL_HPP
