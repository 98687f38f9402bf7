#pragma once

#include <cstddef>
#include <functional>

namespace blastlime {

/// Runs body(i) for i in [0, count) on up to `workers` threads.
///
/// Indices are handed out in contiguous blocks; the first exception thrown by
/// any body is rethrown on the calling thread after all workers join. With
/// workers <= 1 the loop runs inline in index order.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& body);

}  // namespace blastlime
