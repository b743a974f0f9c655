#include "ctrlgs/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ctrlgs/error.hpp"
#include "ctrlgs/windows.hpp"

namespace ctrlgs {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kUnused: return "unused";
  }
  return "unused";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "unused") return Split::kUnused;
  fail(ErrorKind::kIngestion, "unknown split '" + name + "' (expected train, val or unused)");
}

std::vector<const DatasetFrame*> Dataset::split(Split s) const {
  std::vector<const DatasetFrame*> out;
  for (const auto& f : frames)
    if (f.split == s) out.push_back(&f);
  return out;
}

std::vector<double> Dataset::timestamps(Split s) const {
  std::vector<double> out;
  for (const auto& f : frames)
    if (f.split == s) out.push_back(f.t);
  return out;
}

void apply_auto_split(std::vector<DatasetFrame>& frames, int stride) {
  require(stride >= 2, ErrorKind::kInvalidParameter, "auto-split stride must be >= 2");
  const int n = static_cast<int>(frames.size());
  for (int i = 0; i < n; ++i) frames[i].split = i % stride == 0 ? Split::kTrain : Split::kUnused;
  for (int i = 0; i + stride < n; i += stride) frames[i + stride / 2].split = Split::kVal;
}

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(ErrorKind::kIngestion, where + ": " + what);
}

Vec3 vec3_field(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) bad(where, "expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) bad(where, "expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

double number_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number()) bad(where, std::string("missing numeric field '") + key + "'");
  return obj[key].get<double>();
}

Camera parse_camera(const json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "camera must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "width" && key != "height" && key != "fx" && key != "fy" && key != "cx" && key != "cy" &&
        key != "rotation" && key != "translation" && key != "near")
      bad(where, "unknown camera field '" + key + "'");
  Camera c;
  if (!j.contains("width") || !j["width"].is_number_integer() || !j.contains("height") ||
      !j["height"].is_number_integer())
    bad(where, "camera needs integer width and height");
  c.width = j["width"].get<int>();
  c.height = j["height"].get<int>();
  if (c.width < 1 || c.height < 1) bad(where, "camera resolution must be positive");
  c.fx = number_field(j, "fx", where);
  c.fy = number_field(j, "fy", where);
  c.cx = number_field(j, "cx", where);
  c.cy = number_field(j, "cy", where);
  if (j.contains("near")) c.near_plane = number_field(j, "near", where);
  const json& r = j.value("rotation", json());
  if (!r.is_array() || r.size() != 9) bad(where, "camera rotation must be 9 numbers, row-major world-to-camera");
  for (int i = 0; i < 9; ++i) {
    if (!r[i].is_number()) bad(where, "camera rotation must be 9 numbers, row-major world-to-camera");
    c.rotation(i / 3, i % 3) = r[i].get<double>();
  }
  c.translation = vec3_field(j.value("translation", json()), where + ".translation");
  try {
    c.validate();
  } catch (const Error& e) {
    bad(where, e.what());
  }
  return c;
}

json camera_json(const Camera& c) {
  json r = json::array();
  for (int i = 0; i < 9; ++i) r.push_back(c.rotation(i / 3, i % 3));
  return {{"width", c.width},   {"height", c.height}, {"fx", c.fx},
          {"fy", c.fy},         {"cx", c.cx},         {"cy", c.cy},
          {"rotation", r},      {"translation", {c.translation[0], c.translation[1], c.translation[2]}},
          {"near", c.near_plane}};
}

void check_image(const DatasetFrame& f, const std::string& where) {
  if (!std::filesystem::exists(f.image_path)) bad(where, "image not found: " + f.image_path.string());
  Image img;
  try {
    img = read_image(f.image_path);
  } catch (const Error& e) {
    bad(where, e.what());
  }
  if (img.width != f.camera.width || img.height != f.camera.height)
    bad(where, "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + " but the camera is " +
                   std::to_string(f.camera.width) + "x" + std::to_string(f.camera.height));
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options) {
  const std::string name = manifest.string();
  std::ifstream is(manifest);
  if (!is) bad(name, "cannot open manifest");
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    bad(name, std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) bad(name, "manifest must be a JSON object");
  const std::string format = doc.value("format", std::string());
  if (format != kManifestFormat)
    bad(name, "unsupported format '" + format + "' (this build reads " + kManifestFormat + ")");
  for (const auto& [key, _] : doc.items())
    if (key != "format" && key != "cameras" && key != "frames" && key != "scene")
      bad(name, "unknown top-level field '" + key + "'");

  std::map<std::string, Camera> named;
  if (doc.contains("cameras")) {
    if (!doc["cameras"].is_object()) bad(name, "'cameras' must be an object keyed by camera name");
    for (const auto& [key, value] : doc["cameras"].items()) named[key] = parse_camera(value, name + ": cameras." + key);
  }

  Dataset ds;
  ds.manifest_path = manifest;
  const auto root = manifest.parent_path();
  if (doc.contains("scene")) {
    const json& s = doc["scene"];
    if (!s.is_object()) bad(name, "'scene' must be an object");
    for (const auto& [key, _] : s.items())
      if (key != "bounds_min" && key != "bounds_max" && key != "background" && key != "points")
        bad(name, "unknown scene field '" + key + "'");
    if (s.contains("bounds_min")) ds.bounds_min = vec3_field(s["bounds_min"], name + ": scene.bounds_min");
    if (s.contains("bounds_max")) ds.bounds_max = vec3_field(s["bounds_max"], name + ": scene.bounds_max");
    if (s.contains("background")) ds.background = vec3_field(s["background"], name + ": scene.background");
    if ((ds.bounds_max - ds.bounds_min).minCoeff() <= 0.0) bad(name, "scene bounds are empty");
    if (s.contains("points")) {
      if (!s["points"].is_string()) bad(name, "scene.points must be a path");
      ds.points = read_points(root / s["points"].get<std::string>());
    }
  }

  if (!doc.contains("frames") || !doc["frames"].is_array()) bad(name, "missing 'frames' array");
  const json& frames = doc["frames"];
  if (frames.empty()) bad(name, "frame list is empty");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string where = name + ": frames[" + std::to_string(i) + "]";
    const json& f = frames[i];
    if (!f.is_object()) bad(where, "frame must be an object");
    for (const auto& [key, _] : f.items())
      if (key != "image" && key != "camera" && key != "t" && key != "split") bad(where, "unknown field '" + key + "'");
    DatasetFrame frame;
    if (!f.contains("image") || !f["image"].is_string()) bad(where, "missing image path");
    frame.image_path = root / f["image"].get<std::string>();
    frame.t = number_field(f, "t", where);
    if (!(frame.t >= 0.0 && frame.t <= 1.0)) bad(where, "timestamp " + format_shortest(frame.t) + " outside [0, 1]");
    if (!f.contains("camera")) bad(where, "missing camera");
    if (f["camera"].is_string()) {
      const auto it = named.find(f["camera"].get<std::string>());
      if (it == named.end()) bad(where, "unknown camera '" + f["camera"].get<std::string>() + "'");
      frame.camera = it->second;
    } else {
      frame.camera = parse_camera(f["camera"], where + ".camera");
    }
    if (f.contains("split")) {
      if (!f["split"].is_string()) bad(where, "split must be a string");
      try {
        frame.split = parse_split(f["split"].get<std::string>());
      } catch (const Error& e) {
        bad(where, e.what());
      }
    } else if (!options.auto_split) {
      bad(where, "missing split tag (or load with auto-split)");
    }
    if (options.check_images) check_image(frame, where);
    ds.frames.push_back(std::move(frame));
  }
  std::stable_sort(ds.frames.begin(), ds.frames.end(),
                   [](const DatasetFrame& a, const DatasetFrame& b) { return a.t < b.t; });
  if (options.auto_split) apply_auto_split(ds.frames, options.stride);
  return ds;
}

void write_manifest(const std::filesystem::path& manifest, const Dataset& dataset,
                    const std::filesystem::path& points_file) {
  const auto root = manifest.parent_path();
  json doc;
  doc["format"] = kManifestFormat;
  json scene = {{"bounds_min", {dataset.bounds_min[0], dataset.bounds_min[1], dataset.bounds_min[2]}},
                {"bounds_max", {dataset.bounds_max[0], dataset.bounds_max[1], dataset.bounds_max[2]}},
                {"background", {dataset.background[0], dataset.background[1], dataset.background[2]}}};
  if (!points_file.empty()) scene["points"] = std::filesystem::relative(points_file, root).generic_string();
  doc["scene"] = scene;
  json frames = json::array();
  for (const auto& f : dataset.frames)
    frames.push_back({{"image", std::filesystem::relative(f.image_path, root).generic_string()},
                      {"camera", camera_json(f.camera)},
                      {"t", f.t},
                      {"split", split_name(f.split)}});
  doc["frames"] = frames;
  std::ofstream os(manifest);
  require(bool(os), ErrorKind::kIo, "cannot open " + manifest.string() + " for writing");
  os << doc.dump(2) << '\n';
  require(bool(os), ErrorKind::kIo, "failed writing " + manifest.string());
}

void write_points(const std::filesystem::path& path, const std::vector<ScenePoint>& points) {
  std::ofstream os(path);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << kPointsFormat << '\n';
  for (const auto& p : points) {
    for (int i = 0; i < 3; ++i) os << format_shortest(p.position[i]) << ' ';
    os << format_shortest(p.color[0]) << ' ' << format_shortest(p.color[1]) << ' ' << format_shortest(p.color[2])
       << '\n';
  }
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<ScenePoint> read_points(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(bool(is), ErrorKind::kIngestion, "cannot open point file " + path.string());
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kPointsFormat, ErrorKind::kIngestion,
          path.string() + ": expected header '" + std::string(kPointsFormat) + "'");
  std::vector<ScenePoint> points;
  for (int lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string tok;
    double v[6];
    int n = 0;
    try {
      while (ls >> tok) {
        if (n == 6) throw Error(ErrorKind::kIngestion, "too many columns");
        v[n++] = parse_double(tok);
      }
    } catch (const Error&) {
      fail(ErrorKind::kIngestion, path.string() + ":" + std::to_string(lineno) + ": expected 'x y z r g b'");
    }
    require(n == 6, ErrorKind::kIngestion, path.string() + ":" + std::to_string(lineno) + ": expected 'x y z r g b'");
    points.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
  }
  return points;
}

}  // namespace ctrlgs
