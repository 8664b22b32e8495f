#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace longipred {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest decimal representation that round-trips the exact double.
/// All file outputs go through this so reruns are byte-identical.
std::string format_double(double value);

/// Strict full-token parse. Returns false on trailing junk or empty input.
bool parse_double(const std::string& token, double& out);

/// SHA-256 as a lowercase hex digest.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

/// Thread budget: LONGIPRED_THREADS if set (>=1), else hardware concurrency.
int thread_budget();

/// Runs body(i) for i in [0, count) on up to thread_budget() threads
/// (capped by max_threads if positive). Falls back to a serial loop for
/// small counts. body must not throw across threads without care; any
/// exception is rethrown on the calling thread.
void parallel_for_index(int count, const std::function<void(int)>& body,
                        int max_threads = 0);

/// Deterministic random source. Wraps mt19937_64 with hand-rolled
/// transforms so streams do not depend on libstdc++ distribution
/// internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; caches the second draw.
  double normal();

  /// Number of successes in two Bernoulli(p) trials (genotype coding 0/1/2).
  int binomial2(double p) {
    int g = uniform01() < p ? 1 : 0;
    if (uniform01() < p) ++g;
    return g;
  }

  /// Derived stream for replicate work; independent of draws on *this.
  Rng fork(std::uint64_t stream) const;

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace longipred
