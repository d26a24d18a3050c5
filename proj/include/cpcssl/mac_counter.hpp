#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cpcssl {

/// Multiply-accumulate totals per model component ("enc", "ag", "cls", ...).
struct MacTally {
  std::map<std::string, std::uint64_t> by_component;

  std::uint64_t total() const;
  std::uint64_t operator[](const std::string& component) const;
};

/// Routes MACs executed on this thread into a tally while alive.
class MacRecording {
 public:
  explicit MacRecording(MacTally& tally);
  ~MacRecording();
  MacRecording(const MacRecording&) = delete;
  MacRecording& operator=(const MacRecording&) = delete;

 private:
  MacTally* previous_;
};

/// Labels MACs executed on this thread while alive.
class MacComponent {
 public:
  explicit MacComponent(const char* name);
  ~MacComponent();
  MacComponent(const MacComponent&) = delete;
  MacComponent& operator=(const MacComponent&) = delete;

 private:
  const char* previous_;
};

/// Called by the matmul-family kernels. No-op unless a MacRecording is active.
void count_macs(std::uint64_t n);

}  // namespace cpcssl
