#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telepresence/geometry.hpp"

namespace telepresence {

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;
  std::string frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return normals.has_value(); }

  /// Finite coordinates; normals (if any) match in count and are unit length
  /// within 1e-6. Throws InvalidArgument.
  void validate() const;
  PointCloud transformed(const Pose& pose) const;
  PointCloud subset(std::span<const std::size_t> indices) const;
};

/// Binary little-endian "PCB1": u32 N, u8 has_normals, N*3 f32 points,
/// optional N*3 f32 normals.
void write_pcb(std::ostream& out, const PointCloud& cloud);
PointCloud read_pcb(std::istream& in);
void write_pcb_file(const std::string& path, const PointCloud& cloud);
PointCloud read_pcb_file(const std::string& path);

/// One "x y z" per line; blank lines and '#' comments are skipped.
PointCloud read_xyz(std::istream& in);
void write_xyz(std::ostream& out, const PointCloud& cloud);

/// Replaces the points of each occupied voxel by their centroid, in first-seen
/// voxel order. The grid starts at the cloud's minimum corner, so a cloud
/// smaller than one voxel collapses to a single point. Normals are dropped.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

}  // namespace telepresence
