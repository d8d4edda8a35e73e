#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dpmix {

/// Fixed-size pool that runs index-parallel loops. Indices are split into
/// contiguous chunks, one per participant (the calling thread included).
/// Work items must not depend on execution order.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t threads = 1);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const noexcept { return workers_.size() + 1; }

  /// Calls fn(i) for every i in [0, n). Rethrows the first exception.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

 private:
  void worker_loop(std::size_t id);
  void run_chunk(std::size_t participant);

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable start_cv_, done_cv_;
  std::size_t generation_ = 0;
  std::size_t pending_ = 0;
  bool stop_ = false;

  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0;
  std::exception_ptr error_;
};

}  // namespace dpmix
