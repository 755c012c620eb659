#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace metapoi {

inline constexpr int kNumCategories = 10;
inline constexpr int kNumTransitions = kNumCategories * kNumCategories;
inline constexpr int kNumTimeSlots = 48;
inline constexpr int kNumDistanceBuckets = 8;

// First-level venue categories, fixed order.
inline constexpr std::array<std::string_view, kNumCategories> kCategoryCodes = {
    "AE", "CU", "DR", "FO", "NS", "OR", "PO", "RE", "SS", "TT"};

std::string_view category_code(int category_id);

/// Resolves a code ("FO") or a common long name ("Food", "Shop & Service"),
/// case-insensitively. `extra` aliases are consulted first.
std::optional<int> category_index(std::string_view name,
                                  const std::map<std::string, int>& extra = {});

/// "FO2SS" style label for a row-major transition index.
std::string transition_label(int transition_index);

}  // namespace metapoi
