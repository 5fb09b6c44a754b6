#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace facebots {

using PersonId = std::string;
using SessionId = std::string;
// Integer seconds since the Unix epoch.
using Timestamp = std::int64_t;

// Error hierarchy shared by every module. The service layer maps these onto
// its machine-readable error codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BoundsError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct NotFound : Error {
  using Error::Error;
};

struct Conflict : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

// Deterministic sub-stream: the same key always yields the same generator,
// independent of how many other streams were drawn before it.
inline std::mt19937_64 make_stream(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * key.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace facebots
