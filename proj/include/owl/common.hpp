#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace owl {

using ClassId = std::uint32_t;

// Error categories double as CLI exit codes.
enum class ErrorKind : int { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Throws the subclass matching `kind`.
[[noreturn]] void throw_error(ErrorKind kind, const std::string& what);

// splitmix64 step; used for seeding and for deriving sub-stream seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

// Seed for an independent sub-stream: splitmix64 applied to
// seed + (stream + 1) * 0x9E3779B97F4A7C15.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// xoshiro256** seeded from four splitmix64 outputs of the seed.
//
// Derived draws are defined on top of next_u64() so any implementation
// of the same generator reproduces them:
//   uniform()      = (next_u64() >> 11) * 2^-53            in [0, 1)
//   uniform_open() = ((next_u64() >> 11) + 1) * 2^-53      in (0, 1]
//   normal()       = sqrt(-2 ln u1) * cos(2 pi u2), u1 = uniform_open(),
//                    u2 = uniform(); two draws per normal, nothing cached
//   bounded(n)     = rejection sampling on next_u64() against the largest
//                    multiple of n, then modulo n
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;
    double uniform_open() noexcept;
    double normal() noexcept;
    std::uint64_t bounded(std::uint64_t n) noexcept;

private:
    std::uint64_t s_[4];
};

// Fisher-Yates from the back: for i = n-1 .. 1 swap(i, bounded(i + 1)).
template <typename T>
void shuffle(T& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.bounded(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

// Worker count: OWL_THREADS when set and positive, otherwise hardware concurrency.
std::size_t thread_budget();

// Runs fn(i) for i in [0, count) on up to `threads` workers. Any exception
// is rethrown on the caller after all workers stop (the lowest index wins).
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace owl
