#include "convexdyn/scene.hpp"

#include "convexdyn/serialization.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace convexdyn {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw Error(ErrorKind::ConfigParse, where + ": " + what);
}

// Object reader that rejects keys nobody asked for.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!node_.contains(key)) fail(path_, "missing key '" + key + "'");
    return node_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return seen(key), fallback;
    const json& v = at(key);
    if (!v.is_number()) fail(name(key), "expected a number");
    return v.get<double>();
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return seen(key), fallback;
    const json& v = at(key);
    if (!v.is_number_integer()) fail(name(key), "expected an integer");
    return v.get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return seen(key), fallback;
    const json& v = at(key);
    if (!v.is_number_unsigned()) fail(name(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return seen(key), fallback;
    const json& v = at(key);
    if (!v.is_boolean()) fail(name(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return seen(key), fallback;
    const json& v = at(key);
    if (!v.is_string()) fail(name(key), "expected a string");
    return v.get<std::string>();
  }

  Vec3 vec3(const std::string& key, const Vec3& fallback) {
    if (!has(key)) return seen(key), fallback;
    return to_vec3(at(key), name(key));
  }

  std::string name(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key())) fail(path_, "unknown key '" + it.key() + "'");
  }

  static Vec3 to_vec3(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 3) fail(where, "expected an array of 3 numbers");
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) fail(where, "expected an array of 3 numbers");
      out[i] = v[i].get<double>();
    }
    return out;
  }

 private:
  void seen(const std::string& key) { seen_.insert(key); }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

ShapeSpec::Kind shape_kind(const std::string& s, const std::string& where) {
  if (s == "box") return ShapeSpec::Kind::Box;
  if (s == "grid") return ShapeSpec::Kind::Grid;
  if (s == "sphere_cluster") return ShapeSpec::Kind::SphereCluster;
  if (s == "torus_segments") return ShapeSpec::Kind::TorusSegments;
  if (s == "points") return ShapeSpec::Kind::Points;
  if (s == "field_file") return ShapeSpec::Kind::FieldFile;
  fail(where, "unknown shape type '" + s + "'");
}

std::string shape_name(ShapeSpec::Kind k) {
  switch (k) {
    case ShapeSpec::Kind::Box: return "box";
    case ShapeSpec::Kind::Grid: return "grid";
    case ShapeSpec::Kind::SphereCluster: return "sphere_cluster";
    case ShapeSpec::Kind::TorusSegments: return "torus_segments";
    case ShapeSpec::Kind::Points: return "points";
    case ShapeSpec::Kind::FieldFile: return "field_file";
  }
  return "grid";
}

ShapeSpec parse_shape(Section s) {
  ShapeSpec shape;
  shape.kind = shape_kind(s.string("type", "grid"), s.name("type"));
  shape.center = s.vec3("center", shape.center);
  shape.size = s.vec3("size", shape.size);
  if (s.has("cells")) {
    const json& c = s.at("cells");
    if (!c.is_array() || c.size() != 3) fail(s.name("cells"), "expected 3 integers");
    for (int i = 0; i < 3; ++i) {
      if (!c[i].is_number_integer() || c[i].get<int>() < 1)
        fail(s.name("cells"), "expected 3 positive integers");
      shape.cells[i] = c[i].get<int>();
    }
  }
  shape.count = s.integer("count", shape.count);
  shape.radius = s.number("radius", shape.radius);
  shape.cell_size = s.number("cell_size", shape.cell_size);
  if (s.has("points")) {
    const json& prims = s.at("points");
    if (!prims.is_array()) fail(s.name("points"), "expected a list of point lists");
    for (const json& prim : prims) {
      if (!prim.is_array()) fail(s.name("points"), "expected a list of point lists");
      std::vector<Vec3> pts;
      for (const json& p : prim) pts.push_back(Section::to_vec3(p, s.name("points")));
      shape.points.push_back(std::move(pts));
    }
  }
  if (s.has("colors")) {
    const json& cols = s.at("colors");
    if (!cols.is_array()) fail(s.name("colors"), "expected a list of RGB triples");
    for (const json& c : cols) shape.colors.push_back(Section::to_vec3(c, s.name("colors")));
  }
  shape.field_path = s.string("field_path", "");
  shape.opacity = s.number("opacity", shape.opacity);
  shape.smoothness = s.number("smoothness", shape.smoothness);
  shape.sharpness = s.number("sharpness", shape.sharpness);
  s.finish();

  if (shape.size.minCoeff() <= 0.0) fail("shape.size", "must be positive");
  if (shape.count < 1) fail("shape.count", "must be positive");
  if (shape.radius <= 0.0 || shape.cell_size <= 0.0) fail("shape", "radius and cell_size must be positive");
  if (shape.kind == ShapeSpec::Kind::Points && shape.points.empty())
    fail("shape.points", "required for type 'points'");
  if (shape.kind == ShapeSpec::Kind::FieldFile && shape.field_path.empty())
    fail("shape.field_path", "required for type 'field_file'");
  for (const Rgb& c : shape.colors)
    if (c.minCoeff() < 0.0 || c.maxCoeff() > 1.0) fail("shape.colors", "channels must lie in [0,1]");
  return shape;
}

std::vector<Rgb> default_palette() {
  return {Rgb(0.9, 0.3, 0.2), Rgb(0.2, 0.7, 0.3), Rgb(0.25, 0.4, 0.9), Rgb(0.95, 0.8, 0.2),
          Rgb(0.7, 0.3, 0.8), Rgb(0.2, 0.8, 0.8), Rgb(0.95, 0.55, 0.2), Rgb(0.6, 0.6, 0.6)};
}

}  // namespace

std::vector<Camera> SceneConfig::cameras() const {
  std::vector<Camera> out;
  for (const CameraSpec& c : render.cameras)
    out.push_back(Camera::look_at(c.eye, c.target, c.up, c.focal, render.width, render.height));
  return out;
}

SceneConfig parse_scene_config(const json& doc) {
  SceneConfig cfg;
  Section root(doc, "config");

  cfg.shape = parse_shape(Section(root.at("shape"), "shape"));

  {
    Section m(root.at("material"), "material");
    const double E = m.number("youngs_modulus", 8000.0);
    const double nu = m.number("poissons_ratio", 0.4);
    const double rho = m.number("density", 1000.0);
    m.finish();
    try {
      cfg.material = MaterialParams(E, nu, rho);
    } catch (const Error& e) {
      fail("material", e.what());
    }
  }

  {
    Section c(root.at("conditions"), "conditions");
    cfg.conditions.gravity = c.vec3("gravity", cfg.conditions.gravity);
    cfg.conditions.penalty_stiffness = c.number("penalty_stiffness", cfg.conditions.penalty_stiffness);
    if (c.has("floor") && !c.at("floor").is_null()) {
      Section f(c.at("floor"), "conditions.floor");
      Floor floor;
      floor.height = f.number("height", 0.0);
      floor.normal = f.vec3("normal", floor.normal);
      floor.velocity = f.vec3("velocity", floor.velocity);
      f.finish();
      cfg.conditions.floor = floor;
    }
    if (c.has("external_force") && !c.at("external_force").is_null()) {
      Section f(c.at("external_force"), "conditions.external_force");
      ExternalForce force;
      force.force_density = f.vec3("force_density", force.force_density);
      force.start = f.number("start", force.start);
      if (!f.has("end") || !f.at("end").is_null()) force.end = f.number("end", force.end);
      f.finish();
      cfg.conditions.external_force = force;
    }
    c.finish();
    try {
      cfg.conditions.validate();
    } catch (const Error& e) {
      fail("conditions", e.what());
    }
  }

  {
    Section s(root.at("sim"), "sim");
    cfg.sim.dt = s.number("dt", cfg.sim.dt);
    cfg.sim.steps = s.integer("steps", cfg.sim.steps);
    cfg.sim.handles = s.integer("handles", cfg.sim.handles);
    cfg.sim.points_per_primitive = s.integer("points_per_primitive", cfg.sim.points_per_primitive);
    cfg.sim.cubature_points = s.integer("cubature_points", cfg.sim.cubature_points);
    s.finish();
    if (!(cfg.sim.dt > 0.0)) fail("sim.dt", "must be positive");
    if (cfg.sim.steps < 0) fail("sim.steps", "must be non-negative");
    if (cfg.sim.handles < 1 || cfg.sim.handles > 64) fail("sim.handles", "must lie in [1, 64]");
    if (cfg.sim.points_per_primitive < 4 || cfg.sim.points_per_primitive > 14)
      fail("sim.points_per_primitive", "must lie in [4, 14]");
    if (cfg.sim.cubature_points < 1) fail("sim.cubature_points", "must be positive");
  }

  if (root.has("skinning")) {
    Section s(root.at("skinning"), "skinning");
    SkinningHyper& h = cfg.skinning;
    h.steps = s.integer("steps", h.steps);
    h.learning_rate = s.number("learning_rate", h.learning_rate);
    h.lambda_elastic = s.number("lambda_elastic", h.lambda_elastic);
    h.lambda_ortho = s.number("lambda_ortho", h.lambda_ortho);
    h.z_std_start = s.number("z_std_start", h.z_std_start);
    h.z_std_end = s.number("z_std_end", h.z_std_end);
    h.cubature_points = s.integer("cubature_points", h.cubature_points);
    h.batch_size = s.integer("batch_size", h.batch_size);
    h.hidden_layers = s.integer("hidden_layers", h.hidden_layers);
    h.hidden_width = s.integer("hidden_width", h.hidden_width);
    h.final_layer_scale = s.number("final_layer_scale", h.final_layer_scale);
    s.finish();
    if (h.steps < 0 || h.cubature_points < 1 || h.batch_size < 1 || h.hidden_layers < 0 ||
        h.hidden_width < 1)
      fail("skinning", "counts must be positive");
  }

  {
    Section r(root.at("render"), "render");
    cfg.render.width = r.integer("width", cfg.render.width);
    cfg.render.height = r.integer("height", cfg.render.height);
    cfg.render.background = r.vec3("background", cfg.render.background);
    if (r.has("cameras")) {
      const json& cams = r.at("cameras");
      if (!cams.is_array() || cams.empty()) fail("render.cameras", "expected a non-empty list");
      cfg.render.cameras.clear();
      for (const json& cj : cams) {
        Section c(cj, "render.cameras[]");
        CameraSpec spec;
        spec.eye = c.vec3("eye", spec.eye);
        spec.target = c.vec3("target", spec.target);
        spec.up = c.vec3("up", spec.up);
        spec.focal = c.number("focal", spec.focal);
        c.finish();
        cfg.render.cameras.push_back(spec);
      }
    }
    r.finish();
    if (cfg.render.width < 1 || cfg.render.height < 1) fail("render", "resolution must be positive");
    try {
      (void)cfg.cameras();
    } catch (const Error& e) {
      fail("render.cameras", e.what());
    }
  }

  if (root.has("identify")) {
    Section s(root.at("identify"), "identify");
    IdentifySpec& id = cfg.identify;
    id.init_youngs_modulus = s.number("init_youngs_modulus", id.init_youngs_modulus);
    id.init_poissons_ratio = s.number("init_poissons_ratio", id.init_poissons_ratio);
    id.max_iterations = s.integer("max_iterations", id.max_iterations);
    id.observed_frames = s.integer("observed_frames", id.observed_frames);
    id.finetune_skinning = s.boolean("finetune_skinning", id.finetune_skinning);
    id.skinning_learning_rate = s.number("skinning_learning_rate", id.skinning_learning_rate);
    s.finish();
    if (id.max_iterations < 0 || id.observed_frames < 1) fail("identify", "counts must be positive");
    try {
      (void)cfg.material.with_elastic(id.init_youngs_modulus, id.init_poissons_ratio);
    } catch (const Error& e) {
      fail("identify", e.what());
    }
  }

  cfg.seed = root.unsigned_integer("seed", cfg.seed);
  cfg.skinning.seed = cfg.seed;
  root.finish();
  return cfg;
}

SceneConfig load_scene_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileIO, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigParse, path.string() + ": " + e.what());
  }
  SceneConfig cfg = parse_scene_config(doc);
  if (cfg.shape.kind == ShapeSpec::Kind::FieldFile) {
    const std::filesystem::path p(cfg.shape.field_path);
    if (p.is_relative()) cfg.shape.field_path = (path.parent_path() / p).string();
  }
  return cfg;
}

json to_json(const SceneConfig& cfg) {
  json shape = {{"type", shape_name(cfg.shape.kind)},
                {"center", vec_json(cfg.shape.center)},
                {"size", vec_json(cfg.shape.size)},
                {"cells", cfg.shape.cells},
                {"count", cfg.shape.count},
                {"radius", cfg.shape.radius},
                {"cell_size", cfg.shape.cell_size},
                {"opacity", cfg.shape.opacity},
                {"smoothness", cfg.shape.smoothness},
                {"sharpness", cfg.shape.sharpness}};
  if (!cfg.shape.points.empty()) {
    json prims = json::array();
    for (const auto& prim : cfg.shape.points) {
      json pts = json::array();
      for (const Vec3& p : prim) pts.push_back(vec_json(p));
      prims.push_back(pts);
    }
    shape["points"] = prims;
  }
  if (!cfg.shape.colors.empty()) {
    json cols = json::array();
    for (const Rgb& c : cfg.shape.colors) cols.push_back(vec_json(c));
    shape["colors"] = cols;
  }
  if (!cfg.shape.field_path.empty()) shape["field_path"] = cfg.shape.field_path;

  json conditions = {{"gravity", vec_json(cfg.conditions.gravity)},
                     {"penalty_stiffness", cfg.conditions.penalty_stiffness}};
  if (cfg.conditions.floor)
    conditions["floor"] = {{"height", cfg.conditions.floor->height},
                           {"normal", vec_json(cfg.conditions.floor->normal)},
                           {"velocity", vec_json(cfg.conditions.floor->velocity)}};
  if (cfg.conditions.external_force) {
    const ExternalForce& f = *cfg.conditions.external_force;
    conditions["external_force"] = {{"force_density", vec_json(f.force_density)}, {"start", f.start}};
    if (std::isfinite(f.end)) conditions["external_force"]["end"] = f.end;
  }

  json cams = json::array();
  for (const CameraSpec& c : cfg.render.cameras)
    cams.push_back({{"eye", vec_json(c.eye)},
                    {"target", vec_json(c.target)},
                    {"up", vec_json(c.up)},
                    {"focal", c.focal}});

  const SkinningHyper& h = cfg.skinning;
  return {{"shape", shape},
          {"material",
           {{"youngs_modulus", cfg.material.youngs_modulus()},
            {"poissons_ratio", cfg.material.poissons_ratio()},
            {"density", cfg.material.density()}}},
          {"conditions", conditions},
          {"sim",
           {{"dt", cfg.sim.dt},
            {"steps", cfg.sim.steps},
            {"handles", cfg.sim.handles},
            {"points_per_primitive", cfg.sim.points_per_primitive},
            {"cubature_points", cfg.sim.cubature_points}}},
          {"skinning",
           {{"steps", h.steps},
            {"learning_rate", h.learning_rate},
            {"lambda_elastic", h.lambda_elastic},
            {"lambda_ortho", h.lambda_ortho},
            {"z_std_start", h.z_std_start},
            {"z_std_end", h.z_std_end},
            {"cubature_points", h.cubature_points},
            {"batch_size", h.batch_size},
            {"hidden_layers", h.hidden_layers},
            {"hidden_width", h.hidden_width},
            {"final_layer_scale", h.final_layer_scale}}},
          {"render",
           {{"width", cfg.render.width},
            {"height", cfg.render.height},
            {"background", vec_json(cfg.render.background)},
            {"cameras", cams}}},
          {"identify",
           {{"init_youngs_modulus", cfg.identify.init_youngs_modulus},
            {"init_poissons_ratio", cfg.identify.init_poissons_ratio},
            {"max_iterations", cfg.identify.max_iterations},
            {"observed_frames", cfg.identify.observed_frames},
            {"finetune_skinning", cfg.identify.finetune_skinning},
            {"skinning_learning_rate", cfg.identify.skinning_learning_rate}}},
          {"seed", cfg.seed}};
}

std::vector<Vec3> box_cell_points(const Vec3& lo, const Vec3& hi, int K) {
  if (K < 4 || K > 14) throw Error(ErrorKind::InvalidArgument, "box cells carry 4 to 14 points");
  static constexpr int kCorners[8][3] = {{0, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1},
                                         {1, 1, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const Vec3 mid = 0.5 * (lo + hi);
  std::vector<Vec3> pts;
  for (int i = 0; i < std::min(K, 8); ++i) {
    Vec3 p;
    for (int d = 0; d < 3; ++d) p[d] = kCorners[i][d] ? hi[d] : lo[d];
    pts.push_back(p);
  }
  for (int i = 8; i < K; ++i) {
    const int axis = (i - 8) / 2;
    Vec3 p = mid;
    p[axis] = (i - 8) % 2 ? hi[axis] : lo[axis];
    // Lift face centers slightly outward so every point is a hull vertex.
    p[axis] += ((i - 8) % 2 ? 1.0 : -1.0) * 0.25 * (hi[axis] - lo[axis]);
    pts.push_back(p);
  }
  return pts;
}

ConvexField build_rest_field(const SceneConfig& cfg) {
  const ShapeSpec& s = cfg.shape;
  if (s.kind == ShapeSpec::Kind::FieldFile) return read_field(s.field_path);

  const int K = cfg.sim.points_per_primitive;
  const std::vector<Rgb> palette = s.colors.empty() ? default_palette() : s.colors;
  std::vector<ConvexPrimitive> prims;
  auto add = [&](std::vector<Vec3> pts) {
    const Rgb& color = palette[prims.size() % palette.size()];
    prims.push_back(ConvexPrimitive::create(std::move(pts), color, s.opacity, s.smoothness, s.sharpness));
  };
  auto add_cell = [&](const Vec3& center, double edge) {
    const Vec3 half = Vec3::Constant(0.5 * edge);
    add(box_cell_points(center - half, center + half, K));
  };

  switch (s.kind) {
    case ShapeSpec::Kind::Box:
      add(box_cell_points(s.center - 0.5 * s.size, s.center + 0.5 * s.size, K));
      break;
    case ShapeSpec::Kind::Grid: {
      const Vec3 lo = s.center - 0.5 * s.size;
      const Vec3 step = s.size.cwiseQuotient(Vec3(s.cells[0], s.cells[1], s.cells[2]));
      for (int i = 0; i < s.cells[0]; ++i)
        for (int j = 0; j < s.cells[1]; ++j)
          for (int k = 0; k < s.cells[2]; ++k) {
            const Vec3 a = lo + Vec3(i, j, k).cwiseProduct(step);
            add(box_cell_points(a, a + step, K));
          }
      break;
    }
    case ShapeSpec::Kind::SphereCluster: {
      // Fibonacci-sphere cell centers inside the cluster radius.
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      const double r = std::max(0.0, s.radius - 0.5 * s.cell_size);
      for (int i = 0; i < s.count; ++i) {
        const double y = s.count == 1 ? 0.0 : 1.0 - 2.0 * (i + 0.5) / s.count;
        const double ring = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * i;
        add_cell(s.center + r * Vec3(ring * std::cos(phi), y, ring * std::sin(phi)), s.cell_size);
      }
      break;
    }
    case ShapeSpec::Kind::TorusSegments:
      for (int i = 0; i < s.count; ++i) {
        const double phi = 2.0 * std::numbers::pi * i / s.count;
        add_cell(s.center + s.radius * Vec3(std::cos(phi), 0.0, std::sin(phi)), s.cell_size);
      }
      break;
    case ShapeSpec::Kind::Points:
      for (const auto& pts : s.points) add(pts);
      break;
    case ShapeSpec::Kind::FieldFile:
      break;
  }
  return ConvexField::from_rest(std::move(prims));
}

}  // namespace convexdyn
