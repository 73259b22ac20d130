#ifndef DIALQA_RANDOM_HPP
#define DIALQA_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dialqa {

// Seeded generator with distribution code owned here rather than by the
// standard library, so sequences are identical across toolchains and the
// full state can be written into a checkpoint.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream keyed by (seed, a, b); used for per-epoch and
  // per-example generators.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller; no cached second variate, so state is just the engine.
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[uniform_index(i)]);
    }
  }

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t x);

}  // namespace dialqa

#endif  // DIALQA_RANDOM_HPP
