#include "cpcssl/mac_counter.hpp"

namespace cpcssl {

namespace {
thread_local MacTally* active_tally = nullptr;
thread_local const char* active_component = "other";
}  // namespace

std::uint64_t MacTally::total() const {
  std::uint64_t sum = 0;
  for (const auto& [name, n] : by_component) sum += n;
  return sum;
}

std::uint64_t MacTally::operator[](const std::string& component) const {
  auto it = by_component.find(component);
  return it == by_component.end() ? 0 : it->second;
}

MacRecording::MacRecording(MacTally& tally) : previous_(active_tally) { active_tally = &tally; }
MacRecording::~MacRecording() { active_tally = previous_; }

MacComponent::MacComponent(const char* name) : previous_(active_component) {
  active_component = name;
}
MacComponent::~MacComponent() { active_component = previous_; }

void count_macs(std::uint64_t n) {
  if (active_tally) active_tally->by_component[active_component] += n;
}

}  // namespace cpcssl
