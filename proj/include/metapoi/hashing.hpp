#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace metapoi {

/// 64-bit FNV-1a. Stable across builds; used for tensor and config fingerprints.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text);
std::uint64_t tensor_hash(std::span<const double> values);
std::string hex64(std::uint64_t v);

/// Independent per-stage seed, so a resumed pipeline draws the same numbers
/// as an uninterrupted one.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage);

}  // namespace metapoi
