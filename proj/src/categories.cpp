#include "metapoi/categories.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace metapoi {

namespace {

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

const std::map<std::string, int>& long_names() {
  static const std::map<std::string, int> names = {
      {"arts & entertainment", 0},
      {"arts and entertainment", 0},
      {"college & university", 1},
      {"college and university", 1},
      {"drink", 2},
      {"drinks", 2},
      {"food", 3},
      {"nightlife spot", 4},
      {"nightlife", 4},
      {"outdoor & recreation", 5},
      {"outdoors & recreation", 5},
      {"outdoors and recreation", 5},
      {"professional & other places", 6},
      {"professional and other places", 6},
      {"residence", 7},
      {"shop & service", 8},
      {"shops & services", 8},
      {"shop and service", 8},
      {"travel & transport", 9},
      {"travel & transportation", 9},
      {"travel and transport", 9},
  };
  return names;
}

}  // namespace

std::string_view category_code(int category_id) {
  if (category_id < 0 || category_id >= kNumCategories) {
    throw std::out_of_range("category id " + std::to_string(category_id) + " out of range");
  }
  return kCategoryCodes[static_cast<std::size_t>(category_id)];
}

std::optional<int> category_index(std::string_view name, const std::map<std::string, int>& extra) {
  if (auto it = extra.find(std::string(name)); it != extra.end()) return it->second;
  const std::string key = lowered(name);
  for (int c = 0; c < kNumCategories; ++c) {
    if (lowered(kCategoryCodes[static_cast<std::size_t>(c)]) == key) return c;
  }
  if (auto it = long_names().find(key); it != long_names().end()) return it->second;
  return std::nullopt;
}

std::string transition_label(int transition_index) {
  if (transition_index < 0 || transition_index >= kNumTransitions) {
    throw std::out_of_range("transition index out of range");
  }
  return std::string(category_code(transition_index / kNumCategories)) + "2" +
         std::string(category_code(transition_index % kNumCategories));
}

}  // namespace metapoi
