// Copyright 2026 The ReflectCap Authors.
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

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace reflectcap {

// Runs work(i) for every i in [0, n) on up to `workers` threads. commit(i, result) runs
// under a lock in strictly increasing index order, as soon as a contiguous prefix of items
// has finished; failed items are skipped. After all items finish, the exception of the
// lowest failed index, if any, is rethrown.
template <class Work, class Commit>
void parallel_ordered(std::size_t n, int workers, Work&& work, Commit&& commit) {
  using Result = decltype(work(std::size_t{0}));
  std::vector<std::optional<Result>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<char> done(n, 0);
  std::mutex mu;
  std::size_t next_commit = 0;
  std::atomic<std::size_t> next_item{0};

  auto finish = [&](std::size_t i) {
    std::lock_guard lock(mu);
    done[i] = 1;
    while (next_commit < n && done[next_commit]) {
      if (results[next_commit]) commit(next_commit, *results[next_commit]);
      ++next_commit;
    }
  };
  auto run = [&] {
    for (std::size_t i = next_item++; i < n; i = next_item++) {
      try {
        results[i].emplace(work(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
      try {
        finish(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!errors[i]) errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace reflectcap
