// Batched training helpers. A batch is evaluated on per-item graph "slots"
// that share parameters but own their value/grad buffers; slots may run on
// worker threads because gradients are reduced serially in slot order
// afterwards, keeping results bit-identical for any thread count.
#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/graph.hpp"
#include "u2k/rng.hpp"

namespace u2k {

namespace detail {
inline std::atomic<int>& thread_override() {
  static std::atomic<int> v{0};
  return v;
}
}  // namespace detail

// 0 restores automatic selection (U2K_THREADS env var, then hardware)
inline void set_default_threads(int n) { detail::thread_override() = n; }

inline int default_threads() {
  int forced = detail::thread_override();
  if (forced >= 1) return std::min(forced, 64);
  if (const char* env = std::getenv("U2K_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return std::min(n, 64);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return int(hw ? std::min(hw, 8u) : 1u);
}

template <typename F>
inline void parallel_for(int n, F&& fn, int threads = default_threads()) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    int i;
    while ((i = next.fetch_add(1)) < n) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int nt = std::min(threads, n);
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

template <typename T>
inline void zero_grads(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) p->zero_grad();
}

// Identical graphs, one per batch item. BuildFn: Handles(Graph<T>&).
template <typename T, typename Handles>
class BatchSlots {
 public:
  template <typename BuildFn>
  BatchSlots(int count, BuildFn&& build) {
    graphs_.reserve(std::size_t(count));
    handles_.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) {
      graphs_.emplace_back();
      handles_.push_back(build(graphs_.back()));
    }
  }

  int count() const { return int(graphs_.size()); }
  Graph<T>& graph(int i) { return graphs_[std::size_t(i)]; }
  const Handles& handles(int i) const { return handles_[std::size_t(i)]; }

  // Forward + backward `active` slots in parallel (each seeded 1/active so
  // the batch loss is the mean of slot losses), then reduce the gradients
  // into the shared parameters in slot order. set_inputs(slot, graph,
  // handles) feeds the slot; loss_of(handles) names the loss node. Returns
  // the mean loss.
  template <typename SetFn, typename LossFn>
  double run_batch(int active, SetFn&& set_inputs, LossFn&& loss_of, int threads = default_threads()) {
    require(active >= 1 && active <= count(), ErrorKind::Config, "run_batch: bad batch size");
    T seed = T(1) / T(active);
    parallel_for(
        active,
        [&](int s) {
          Graph<T>& g = graphs_[std::size_t(s)];
          set_inputs(s, g, handles_[std::size_t(s)]);
          g.forward();
          g.backward(loss_of(handles_[std::size_t(s)]), seed);
        },
        threads);
    double mean = 0.0;
    for (int s = 0; s < active; ++s) {
      graphs_[std::size_t(s)].flush_param_grads();
      mean += double(graphs_[std::size_t(s)].value(loss_of(handles_[std::size_t(s)]))[0]);
    }
    return mean / double(active);
  }

  // Forward-only probe of one slot.
  template <typename SetFn>
  void run_forward(int slot, SetFn&& set_inputs) {
    Graph<T>& g = graphs_[std::size_t(slot)];
    set_inputs(slot, g, handles_[std::size_t(slot)]);
    g.forward();
  }

 private:
  std::vector<Graph<T>> graphs_;
  std::vector<Handles> handles_;
};

// seeded index shuffle (Fisher-Yates)
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx;
  idx.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) idx[std::size_t(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = int(rng.below(std::uint64_t(i) + 1));
    std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
  }
  return idx;
}

}  // namespace u2k
