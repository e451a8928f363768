#pragma once

#include "convexdyn/convex_field.hpp"
#include "convexdyn/reduced_sim.hpp"
#include "convexdyn/renderer.hpp"
#include "convexdyn/skinning.hpp"

#include <cstdint>
#include <filesystem>

#include <json.hpp>

namespace convexdyn {

// Binary files start with an 8-byte magic and a u32 schema version; all
// numbers are little-endian. Readers reject other versions with UnsupportedVersion.
constexpr std::uint32_t kSkinningFileVersion = 1;
constexpr std::uint32_t kTrajectoryFileVersion = 1;
constexpr std::uint32_t kFieldFileVersion = 1;

/// Magic, version, u32 header length, JSON header (layer sizes, domain box,
/// handle and parameter counts), then the flat float64 parameters.
void write_skinning(const std::filesystem::path& path, const SkinningField& field);
SkinningField read_skinning(const std::filesystem::path& path);

/// Magic, version, M, frame count, dt, the rest primitives (K, appearance,
/// rest points), then per frame: time, dt, z, z_dot and all advected points.
void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory read_trajectory(const std::filesystem::path& path);

/// Magic, version, then per primitive: K, appearance, rest points, current points.
void write_field(const std::filesystem::path& path, const ConvexField& field);
ConvexField read_field(const std::filesystem::path& path);

nlohmann::json camera_json(const Camera& camera);
Camera camera_from_json(const nlohmann::json& j);

/// Appends one compact JSON object and a newline.
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);

}  // namespace convexdyn
