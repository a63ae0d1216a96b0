#pragma once

#include <cstddef>
#include <functional>

namespace cis {

/// Worker count used by batch evaluations; 1 unless configured.
unsigned worker_count() noexcept;
void set_worker_count(unsigned threads) noexcept;

/// Runs fn(i) for i in [0, count). Work is split into contiguous chunks; fn
/// must only write to slot i of its outputs so results do not depend on the
/// worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace cis
