#include "convexdyn/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace convexdyn {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

using nlohmann::json;

namespace {

constexpr char kSkinMagic[8] = {'C', 'V', 'X', 'S', 'K', 'I', 'N', '\0'};
constexpr char kTrajMagic[8] = {'C', 'V', 'X', 'T', 'R', 'A', 'J', '\0'};
constexpr char kFieldMagic[8] = {'C', 'V', 'X', 'F', 'L', 'D', '\0', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::FileIO, "cannot open " + path.string() + " for writing");
  }

  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void vec3(const Vec3& v) {
    for (int i = 0; i < 3; ++i) put(v[i]);
  }
  void vecx(const VecX& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
  }
  void close() {
    out_.close();
    if (!out_) throw Error(ErrorKind::FileIO, "failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::FileIO, "cannot open " + path.string());
  }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T)))
      throw Error(ErrorKind::FileIO, "truncated file " + path_.string());
    return v;
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw Error(ErrorKind::FileIO, "truncated file " + path_.string());
    return s;
  }
  Vec3 vec3() {
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = get<double>();
    return v;
  }
  VecX vecx(Eigen::Index n) {
    VecX v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = get<double>();
    return v;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof())
      throw Error(ErrorKind::FileIO, "trailing bytes in " + path_.string());
  }
  void header(const char (&magic)[8], std::uint32_t version, const char* what) {
    if (bytes(8) != std::string(magic, 8))
      throw Error(ErrorKind::FileIO, path_.string() + " is not a " + what + " file");
    const auto v = get<std::uint32_t>();
    if (v != version)
      throw Error(ErrorKind::UnsupportedVersion, path_.string() + ": unsupported " + what +
                                                     " file version " + std::to_string(v) +
                                                     " (expected " + std::to_string(version) + ")");
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void put_appearance(Writer& w, const ConvexPrimitive& p) {
  w.put(static_cast<std::uint32_t>(p.points().size()));
  w.vec3(p.color());
  w.put(p.opacity());
  w.put(p.smoothness());
  w.put(p.sharpness());
}

struct Appearance {
  std::uint32_t K;
  Rgb color;
  double opacity, smoothness, sharpness;
};

Appearance get_appearance(Reader& r) {
  Appearance a;
  a.K = r.get<std::uint32_t>();
  if (a.K < 4 || a.K > 1u << 20) throw Error(ErrorKind::FileIO, "implausible point count in " + r.path().string());
  a.color = r.vec3();
  a.opacity = r.get<double>();
  a.smoothness = r.get<double>();
  a.sharpness = r.get<double>();
  return a;
}

ConvexPrimitive make(const Appearance& a, std::vector<Vec3> pts) {
  return ConvexPrimitive::create(std::move(pts), a.color, a.opacity, a.smoothness, a.sharpness);
}

std::vector<Vec3> get_points(Reader& r, std::uint32_t K) {
  std::vector<Vec3> pts(K);
  for (Vec3& p : pts) p = r.vec3();
  return pts;
}

}  // namespace

void write_skinning(const std::filesystem::path& path, const SkinningField& field) {
  const json header = {{"layer_sizes", field.layer_sizes()},
                       {"num_handles", field.num_handles()},
                       {"domain_lo", {field.domain_box().lo.x(), field.domain_box().lo.y(), field.domain_box().lo.z()}},
                       {"domain_hi", {field.domain_box().hi.x(), field.domain_box().hi.y(), field.domain_box().hi.z()}},
                       {"parameter_count", field.parameters().size()}};
  const std::string text = header.dump();
  Writer w(path);
  w.bytes(kSkinMagic, 8);
  w.put(kSkinningFileVersion);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  // Domain box again in binary so it round-trips bitwise.
  w.vec3(field.domain_box().lo);
  w.vec3(field.domain_box().hi);
  w.vecx(field.parameters());
  w.close();
}

SkinningField read_skinning(const std::filesystem::path& path) {
  Reader r(path);
  r.header(kSkinMagic, kSkinningFileVersion, "skinning");
  const auto len = r.get<std::uint32_t>();
  if (len > (1u << 24)) throw Error(ErrorKind::FileIO, "implausible header length in " + path.string());
  json header;
  try {
    header = json::parse(r.bytes(len));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FileIO, path.string() + ": bad header: " + e.what());
  }
  std::vector<int> sizes;
  std::size_t count = 0;
  try {
    sizes = header.at("layer_sizes").get<std::vector<int>>();
    count = header.at("parameter_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FileIO, path.string() + ": bad header: " + e.what());
  }
  if (sizes.size() < 2 || SkinningField::parameter_count(sizes) != count)
    throw Error(ErrorKind::FileIO, path.string() + ": header and parameter count disagree");
  Aabb box;
  box.lo = r.vec3();
  box.hi = r.vec3();
  VecX params = r.vecx(static_cast<Eigen::Index>(count));
  r.expect_end();
  return SkinningField(std::move(sizes), box, std::move(params));
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  if (traj.frames.empty()) throw Error(ErrorKind::InvalidArgument, "trajectory has no frames");
  const Frame& first = traj.frames.front();
  const auto& rest = first.field.rest_primitives;
  Writer w(path);
  w.bytes(kTrajMagic, 8);
  w.put(kTrajectoryFileVersion);
  w.put(static_cast<std::uint32_t>(first.state.num_handles()));
  w.put(static_cast<std::uint64_t>(traj.frames.size()));
  w.put(first.state.dt);
  w.put(static_cast<std::uint32_t>(rest.size()));
  for (const ConvexPrimitive& p : rest) {
    put_appearance(w, p);
    for (const Vec3& x : p.points()) w.vec3(x);
  }
  for (const Frame& f : traj.frames) {
    if (f.state.z.size() != first.state.z.size() || f.field.size() != rest.size())
      throw Error(ErrorKind::ShapeMismatch, "trajectory frames are inconsistent");
    w.put(f.state.time);
    w.put(f.state.dt);
    w.vecx(f.state.z);
    w.vecx(f.state.z_dot);
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (f.field.primitives[i].points().size() != rest[i].points().size())
        throw Error(ErrorKind::ShapeMismatch, "trajectory point counts are inconsistent");
      for (const Vec3& x : f.field.primitives[i].points()) w.vec3(x);
    }
  }
  w.close();
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  Reader r(path);
  r.header(kTrajMagic, kTrajectoryFileVersion, "trajectory");
  const auto M = r.get<std::uint32_t>();
  const auto frames = r.get<std::uint64_t>();
  (void)r.get<double>();
  const auto N = r.get<std::uint32_t>();
  if (M < 1 || M > 4096 || frames < 1 || frames > (1u << 24) || N > (1u << 20))
    throw Error(ErrorKind::FileIO, "implausible trajectory header in " + path.string());
  std::vector<Appearance> looks;
  std::vector<ConvexPrimitive> rest;
  for (std::uint32_t i = 0; i < N; ++i) {
    looks.push_back(get_appearance(r));
    rest.push_back(make(looks.back(), get_points(r, looks.back().K)));
  }
  const Eigen::Index dofs = kDofsPerHandle * static_cast<Eigen::Index>(M);
  Trajectory traj;
  for (std::uint64_t f = 0; f < frames; ++f) {
    Frame frame;
    frame.state.time = r.get<double>();
    frame.state.dt = r.get<double>();
    frame.state.z = r.vecx(dofs);
    frame.state.z_dot = r.vecx(dofs);
    frame.field.rest_primitives = rest;
    for (std::uint32_t i = 0; i < N; ++i)
      frame.field.primitives.push_back(make(looks[i], get_points(r, looks[i].K)));
    traj.frames.push_back(std::move(frame));
  }
  r.expect_end();
  return traj;
}

void write_field(const std::filesystem::path& path, const ConvexField& field) {
  field.validate();
  Writer w(path);
  w.bytes(kFieldMagic, 8);
  w.put(kFieldFileVersion);
  w.put(static_cast<std::uint32_t>(field.size()));
  for (std::size_t i = 0; i < field.size(); ++i) {
    const ConvexPrimitive& p = field.primitives[i];
    if (field.rest_primitives[i].points().size() != p.points().size())
      throw Error(ErrorKind::ShapeMismatch, "rest and current point counts differ");
    put_appearance(w, p);
    for (const Vec3& x : field.rest_primitives[i].points()) w.vec3(x);
    for (const Vec3& x : p.points()) w.vec3(x);
  }
  w.close();
}

ConvexField read_field(const std::filesystem::path& path) {
  Reader r(path);
  r.header(kFieldMagic, kFieldFileVersion, "field");
  const auto N = r.get<std::uint32_t>();
  if (N > (1u << 20)) throw Error(ErrorKind::FileIO, "implausible primitive count in " + path.string());
  ConvexField field;
  for (std::uint32_t i = 0; i < N; ++i) {
    const Appearance a = get_appearance(r);
    field.rest_primitives.push_back(make(a, get_points(r, a.K)));
    field.primitives.push_back(make(a, get_points(r, a.K)));
  }
  r.expect_end();
  return field;
}

json camera_json(const Camera& c) {
  json rot = json::array();
  for (int i = 0; i < 3; ++i) rot.push_back({c.rotation(i, 0), c.rotation(i, 1), c.rotation(i, 2)});
  return {{"position", {c.position.x(), c.position.y(), c.position.z()}},
          {"rotation", rot},
          {"focal", c.focal},
          {"width", c.width},
          {"height", c.height},
          {"near", c.near}};
}

Camera camera_from_json(const json& j) {
  Camera c;
  try {
    for (int i = 0; i < 3; ++i) c.position[i] = j.at("position").at(i).get<double>();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) c.rotation(i, k) = j.at("rotation").at(i).at(k).get<double>();
    c.focal = j.at("focal").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.near = j.at("near").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigParse, std::string("bad camera record: ") + e.what());
  }
  c.validate();
  return c;
}

void append_jsonl(const std::filesystem::path& path, const json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::FileIO, "cannot open " + path.string() + " for appending");
  out << record.dump() << '\n';
  if (!out) throw Error(ErrorKind::FileIO, "failed writing " + path.string());
}

}  // namespace convexdyn
