#pragma once

#include <cstddef>
#include <functional>

namespace dprgmi {

// Worker threads used by parallel_for. Defaults to 1 (fully serial).
void set_worker_threads(unsigned n);
unsigned worker_threads();

// Runs fn(i) for i in [0, n). Work items write only to their own outputs;
// any reduction over the results happens afterwards in index order, so the
// outcome is bitwise independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dprgmi
