#include "telepresence/point_cloud.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "telepresence/error.hpp"

namespace telepresence {

static_assert(std::endian::native == std::endian::little, "PCB1 I/O assumes a little-endian host");

void PointCloud::validate() const {
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite point");
  }
  if (normals) {
    if (normals->size() != points.size()) {
      throw Error(ErrorCode::InvalidArgument, "normal count differs from point count");
    }
    for (const auto& n : *normals) {
      if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, "normal is not unit length");
      }
    }
  }
}

PointCloud PointCloud::transformed(const Pose& pose) const {
  PointCloud out;
  out.frame_id = frame_id;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(pose.apply(p));
  if (normals) {
    out.normals.emplace();
    out.normals->reserve(normals->size());
    for (const auto& n : *normals) out.normals->push_back(pose.rotation() * n);
  }
  return out;
}

PointCloud PointCloud::subset(std::span<const std::size_t> indices) const {
  PointCloud out;
  out.frame_id = frame_id;
  out.points.reserve(indices.size());
  for (auto i : indices) out.points.push_back(points.at(i));
  if (normals) {
    out.normals.emplace();
    out.normals->reserve(indices.size());
    for (auto i : indices) out.normals->push_back(normals->at(i));
  }
  return out;
}

void write_pcb(std::ostream& out, const PointCloud& cloud) {
  out.write("PCB1", 4);
  const std::uint32_t n = static_cast<std::uint32_t>(cloud.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  const std::uint8_t has_normals = cloud.has_normals() ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&has_normals), 1);
  auto write_vecs = [&](const std::vector<Vec3>& vs) {
    for (const auto& v : vs) {
      const float f[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                          static_cast<float>(v.z())};
      out.write(reinterpret_cast<const char*>(f), sizeof f);
    }
  };
  write_vecs(cloud.points);
  if (cloud.normals) write_vecs(*cloud.normals);
  if (!out) throw Error(ErrorCode::IoError, "failed writing PCB1 stream");
}

PointCloud read_pcb(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PCB1", 4) != 0) {
    throw Error(ErrorCode::ParseError, "missing PCB1 magic");
  }
  std::uint32_t n = 0;
  std::uint8_t has_normals = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof n) ||
      !in.read(reinterpret_cast<char*>(&has_normals), 1)) {
    throw Error(ErrorCode::ParseError, "truncated PCB1 header");
  }
  if (has_normals > 1) throw Error(ErrorCode::ParseError, "bad has_normals flag");
  auto read_vecs = [&](std::vector<Vec3>& vs) {
    vs.resize(n);
    for (auto& v : vs) {
      float f[3];
      if (!in.read(reinterpret_cast<char*>(f), sizeof f)) {
        throw Error(ErrorCode::ParseError, "truncated PCB1 body");
      }
      v = Vec3(f[0], f[1], f[2]);
    }
  };
  PointCloud cloud;
  read_vecs(cloud.points);
  if (has_normals) {
    cloud.normals.emplace();
    read_vecs(*cloud.normals);
  }
  return cloud;
}

void write_pcb_file(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  write_pcb(out, cloud);
}

PointCloud read_pcb_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_pcb(in);
}

PointCloud read_xyz(std::istream& in) {
  PointCloud cloud;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) {
      throw Error(ErrorCode::ParseError, "bad XYZ line " + std::to_string(lineno));
    }
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  char buf[128];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
    h ^= static_cast<std::size_t>(k.y) * 19349663u;
    h ^= static_cast<std::size_t>(k.z) * 83492791u;
    return h;
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel size must be > 0");
  std::unordered_map<VoxelKey, std::size_t, VoxelHash> slot;
  std::vector<Vec3> sums;
  std::vector<int> counts;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const auto& p : cloud.points) lo = lo.cwiseMin(p);
  for (const auto& p : cloud.points) {
    const Vec3 q = (p - lo) / voxel;
    const VoxelKey key{static_cast<std::int64_t>(std::floor(q.x())),
                       static_cast<std::int64_t>(std::floor(q.y())),
                       static_cast<std::int64_t>(std::floor(q.z()))};
    auto [it, inserted] = slot.try_emplace(key, sums.size());
    if (inserted) {
      sums.push_back(p);
      counts.push_back(1);
    } else {
      sums[it->second] += p;
      ++counts[it->second];
    }
  }
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) out.points.push_back(sums[i] / counts[i]);
  return out;
}

}  // namespace telepresence
