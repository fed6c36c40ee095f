#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace stride {

enum class VarKind : std::uint8_t { kPose = 0, kScale = 1, kAnchor = 2 };

/// Identifies one optimization variable. Poses and scales are bound to an
/// agent and a step/scan ordinal; anchors are shared across agents and carry
/// only the anchor id in `index`.
struct VariableKey {
  VarKind kind = VarKind::kPose;
  std::int32_t agent = 0;
  std::int64_t index = 0;

  static constexpr std::int32_t kNoAgent = -1;

  static VariableKey pose(std::int32_t agent, std::int64_t step) {
    return {VarKind::kPose, agent, step};
  }
  static VariableKey scale(std::int32_t agent, std::int64_t step) {
    return {VarKind::kScale, agent, step};
  }
  static VariableKey anchor(std::int64_t id) { return {VarKind::kAnchor, kNoAgent, id}; }

  auto operator<=>(const VariableKey&) const = default;
};

inline std::string to_string(const VariableKey& key) {
  switch (key.kind) {
    case VarKind::kPose:
      return "pose(" + std::to_string(key.agent) + "," + std::to_string(key.index) + ")";
    case VarKind::kScale:
      return "scale(" + std::to_string(key.agent) + "," + std::to_string(key.index) + ")";
    case VarKind::kAnchor:
      return "anchor(" + std::to_string(key.index) + ")";
  }
  return "key(?)";
}

}  // namespace stride
