#pragma once

#include <functional>

namespace flatcover {

// Worker count: FLATCOVER_THREADS if set (>= 1), else hardware concurrency.
int thread_count();
void set_thread_count(int n);

// Runs f(i) for i in [0, n). Nested calls run serially on the calling thread.
void parallel_for(long n, const std::function<void(long)>& f);

}  // namespace flatcover
