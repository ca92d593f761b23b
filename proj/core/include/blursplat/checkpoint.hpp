// Scene checkpoint container. One file holds named float arrays plus a
// JSON header, so any implementation can read it from this layout:
//
//   [0..4)     magic "BSPC"
//   [4..8)     format version, u32 little-endian (currently 1)
//   [8..16)    header byte length H, u64 little-endian
//   [16..16+H) header: UTF-8 JSON
//              {"arrays": [{"dtype": "f32"|"f64", "name": ..,
//                           "shape": [..]}, ...], "meta": {...}}
//   16+H..     array payloads packed back to back in directory order,
//              row-major, little-endian 4-byte (f32) or 8-byte (f64)
//              floats.
//
// Gaussian parameters are stored as f32 interchange arrays; poses and
// optional "exact/" shadows are f64 so training can resume bit-exactly.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "blursplat/deform.hpp"
#include "blursplat/gaussian.hpp"
#include "blursplat/lie.hpp"

namespace blursplat {

inline constexpr std::uint32_t kBspcVersion = 1;

struct BspcArray {
  std::string name;
  std::vector<std::size_t> shape;
  bool f64 = false;          // packed as f32 when false
  std::vector<double> data;  // held as double in memory regardless

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
};

struct BspcFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<BspcArray> arrays;

  BspcArray& add(const std::string& name, std::vector<std::size_t> shape,
                 bool f64);
  const BspcArray* find(const std::string& name) const;
  // find() that throws instead of returning null.
  const BspcArray& at(const std::string& name) const;
};

// Throws std::invalid_argument on malformed content (duplicate or
// mis-sized arrays) and std::runtime_error on I/O failure.
void write_bspc(const std::string& path, const BspcFile& file);
BspcFile read_bspc(const std::string& path);

// --- Scene payload helpers. `exact` adds f64 shadow arrays under
// "exact/" that unpack_* prefer, making round trips bit-exact.

void pack_cloud(BspcFile* file, const GaussianCloud& cloud, bool exact);
GaussianCloud unpack_cloud(const BspcFile& file);

// Field arrays live under "<prefix>/w<i>", "<prefix>/b<i>"; the layer
// count, encoding bands and role go to meta["fields"][prefix].
void pack_field(BspcFile* file, const std::string& prefix,
                const DeformField& field, bool exact);
DeformField unpack_field(const BspcFile& file, const std::string& prefix);
bool has_field(const BspcFile& file, const std::string& prefix);

// Poses as [count, 7] f64 rows (qw, qx, qy, qz, tx, ty, tz).
void pack_pose_array(BspcFile* file, const std::string& name,
                     const std::vector<Pose>& poses);
std::vector<Pose> unpack_pose_array(const BspcFile& file,
                                    const std::string& name);

// Delta pairs as [count, 12] f64 rows (start tangent, end tangent).
void pack_delta_pairs(BspcFile* file, const std::string& name,
                      const std::vector<PoseDeltaPair>& deltas);
std::vector<PoseDeltaPair> unpack_delta_pairs(const BspcFile& file,
                                              const std::string& name);

}  // namespace blursplat
