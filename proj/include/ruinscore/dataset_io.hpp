#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "ruinscore/error.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

using json = nlohmann::json;

// Integer class id (as written in box text files) -> class.
template <class Class>
using ClassMap = std::map<int, Class>;

template <class Class>
ClassMap<Class> default_class_map() {
  ClassMap<Class> m;
  for (std::size_t i = 0; i < enum_count<Class>(); ++i)
    m.emplace(static_cast<int>(i), static_cast<Class>(i));
  return m;
}

struct ClassMaps {
  ClassMap<DamageClass> damage = default_class_map<DamageClass>();
  ClassMap<ComponentClass> component = default_class_map<ComponentClass>();

  friend bool operator==(const ClassMaps&, const ClassMaps&) = default;
};

struct ImageEntry {
  std::string id;
  std::optional<std::string> image_path;
  std::optional<DamageLevel> ground_truth_level;
  std::optional<SceneLabel> scene_override;
  std::optional<std::string> damage_file;
  std::optional<std::string> components_file;

  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

struct DatasetManifest {
  std::vector<ImageEntry> images;
  ClassMaps class_maps;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::IoFailure, path.string());
}

// ---------------------------------------------------------------------------
// Box text: `class_id cx cy w h [conf]` per line, `#` comments.

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view tok) {
  T v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

}  // namespace detail

template <class Class>
std::vector<Detection<Class>> parse_box_text(std::string_view text, const ClassMap<Class>& class_map) {
  static constexpr std::array<const char*, 5> field_names = {"class_id", "cx", "cy", "w", "h"};
  std::vector<Detection<Class>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;

    auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.size() != 5 && toks.size() != 6)
      throw BadLineError(line_no, fmt::format("expected 5 or 6 fields, got {}", toks.size()));

    auto id = detail::parse_number<int>(toks[0]);
    if (!id) throw BadLineError(line_no, "class_id must be an integer");
    std::array<double, 5> vals{};
    for (std::size_t k = 1; k < toks.size(); ++k) {
      auto v = detail::parse_number<double>(toks[k]);
      if (!v) {
        const char* name = k < 5 ? field_names[k] : "conf";
        throw BadLineError(line_no, fmt::format("{} is not a number", name));
      }
      vals[k - 1] = *v;
    }
    auto it = class_map.find(*id);
    if (it == class_map.end()) throw BadLineError(line_no, fmt::format("unknown class id {}", *id));

    Detection<Class> d;
    d.cls = it->second;
    d.box = {vals[0], vals[1], vals[2], vals[3]};
    d.confidence = toks.size() == 6 ? vals[4] : 1.0;
    if (auto why = check_box(d.box)) throw BadLineError(line_no, *why);
    if (!valid_confidence(d.confidence)) throw BadLineError(line_no, "conf must be in [0,1]");
    out.push_back(d);
  }
  return out;
}

template <class Class>
std::string to_box_text(const std::vector<Detection<Class>>& dets, const ClassMap<Class>& class_map) {
  std::string out;
  for (const auto& d : dets) {
    int id = -1;
    for (const auto& [k, v] : class_map)
      if (v == d.cls) id = k;
    out += fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f} {:.6f}\n", id, d.box.cx, d.box.cy, d.box.w,
                       d.box.h, d.confidence);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection JSON: {"detections": [{"class": name, "box": [cx,cy,w,h], "confidence": c}]}

namespace detail {

[[noreturn]] inline void schema(const std::string& path) {
  throw Error(ErrorKind::SchemaViolation, path);
}

inline double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) schema(path);
  return j.get<double>();
}

inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& prefix) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) schema(prefix.empty() ? key : prefix + "." + key);
  }
}

inline json parse_json_text(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) schema("$");
  return j;
}

}  // namespace detail

// `task` and `image` are tolerated at the top level so backend responses that
// echo their request parse with the same routine.
template <class Class>
std::vector<Detection<Class>> detections_from_json(const json& root) {
  if (!root.is_object()) detail::schema("$");
  detail::reject_unknown_keys(root, {"detections", "task", "image"}, "");
  if (!root.contains("detections") || !root["detections"].is_array()) detail::schema("detections");

  std::vector<Detection<Class>> out;
  const auto& arr = root["detections"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string at = fmt::format("detections[{}]", i);
    const auto& d = arr[i];
    if (!d.is_object()) detail::schema(at);
    detail::reject_unknown_keys(d, {"class", "box", "confidence"}, at);

    if (!d.contains("class") || !d["class"].is_string()) detail::schema(at + ".class");
    const auto name = d["class"].get<std::string>();
    auto cls = enum_from_name<Class>(name);
    if (!cls) throw Error(ErrorKind::UnknownClass, name);

    if (!d.contains("box") || !d["box"].is_array() || d["box"].size() != 4) detail::schema(at + ".box");
    BoundingBox box;
    box.cx = detail::number_at(d["box"][0], at + ".box[0]");
    box.cy = detail::number_at(d["box"][1], at + ".box[1]");
    box.w = detail::number_at(d["box"][2], at + ".box[2]");
    box.h = detail::number_at(d["box"][3], at + ".box[3]");
    if (check_box(box)) detail::schema(at + ".box");

    double conf = 1.0;
    if (d.contains("confidence")) conf = detail::number_at(d["confidence"], at + ".confidence");
    if (!valid_confidence(conf)) detail::schema(at + ".confidence");

    out.push_back({*cls, box, conf});
  }
  return out;
}

template <class Class>
std::vector<Detection<Class>> parse_json_detections(std::string_view text) {
  return detections_from_json<Class>(detail::parse_json_text(text));
}

template <class Class>
json detections_to_json(const std::vector<Detection<Class>>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    arr.push_back({{"class", std::string(name_of(d.cls))},
                   {"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                   {"confidence", d.confidence}});
  }
  return json{{"detections", std::move(arr)}};
}

template <class Class>
std::string serialize_json_detections(const std::vector<Detection<Class>>& dets) {
  return detections_to_json(dets).dump();
}

// Detection files ending in `.json` use the JSON schema; anything else is box text.
template <class Class>
std::vector<Detection<Class>> load_detections(const std::filesystem::path& path,
                                              const ClassMap<Class>& class_map) {
  const std::string text = read_file(path);
  if (path.extension() == ".json") return parse_json_detections<Class>(text);
  return parse_box_text<Class>(text, class_map);
}

// ---------------------------------------------------------------------------
// Manifest

namespace detail {

template <class Class>
ClassMap<Class> parse_class_map(const json& j, const std::string& at) {
  if (!j.is_object()) schema(at);
  ClassMap<Class> m;
  std::set<Class> seen;
  for (const auto& [key, val] : j.items()) {
    auto id = parse_number<int>(key);
    if (!id) schema(at + "." + key);
    if (!val.is_string()) schema(at + "." + key);
    const std::string name = val.template get<std::string>();
    auto cls = enum_from_name<Class>(name);
    if (!cls) throw Error(ErrorKind::UnknownClass, name);
    if (!m.emplace(*id, *cls).second || !seen.insert(*cls).second) schema(at + "." + key);
  }
  if (seen.size() != enum_count<Class>()) schema(at);
  return m;
}

inline std::optional<std::string> opt_path(const json& img, const char* key, const std::string& at,
                                           const std::filesystem::path& base_dir) {
  if (!img.contains(key)) return std::nullopt;
  const auto& v = img[key];
  if (!v.is_string()) schema(at + "." + key);
  std::filesystem::path p = v.get<std::string>();
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p.lexically_normal().string();
}

}  // namespace detail

// Relative file references are resolved against `base_dir`.
inline DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {}) {
  const json root = detail::parse_json_text(text);
  if (!root.is_object()) detail::schema("$");
  detail::reject_unknown_keys(root, {"class_maps", "images"}, "");

  DatasetManifest m;
  if (root.contains("class_maps")) {
    const auto& cm = root["class_maps"];
    if (!cm.is_object()) detail::schema("class_maps");
    detail::reject_unknown_keys(cm, {"damage", "component"}, "class_maps");
    if (cm.contains("damage"))
      m.class_maps.damage = detail::parse_class_map<DamageClass>(cm["damage"], "class_maps.damage");
    if (cm.contains("component"))
      m.class_maps.component =
          detail::parse_class_map<ComponentClass>(cm["component"], "class_maps.component");
  }

  if (!root.contains("images") || !root["images"].is_array()) detail::schema("images");
  const auto& images = root["images"];
  std::set<std::string> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string at = fmt::format("images[{}]", i);
    const auto& img = images[i];
    if (!img.is_object()) detail::schema(at);
    detail::reject_unknown_keys(
        img, {"id", "image_path", "ground_truth_level", "scene", "damage_file", "components_file"}, at);

    ImageEntry e;
    if (!img.contains("id") || !img["id"].is_string()) detail::schema(at + ".id");
    e.id = img["id"].get<std::string>();
    if (e.id.empty()) detail::schema(at + ".id");
    if (!ids.insert(e.id).second) throw Error(ErrorKind::DuplicateImageId, e.id);

    e.image_path = detail::opt_path(img, "image_path", at, base_dir);
    e.damage_file = detail::opt_path(img, "damage_file", at, base_dir);
    e.components_file = detail::opt_path(img, "components_file", at, base_dir);

    if (img.contains("ground_truth_level")) {
      const auto& g = img["ground_truth_level"];
      if (!g.is_number_integer()) detail::schema(at + ".ground_truth_level");
      e.ground_truth_level = level_from_ordinal(g.get<long long>());
      if (!e.ground_truth_level) detail::schema(at + ".ground_truth_level");
    }
    if (img.contains("scene")) {
      const auto& s = img["scene"];
      std::optional<SceneClass> cls;
      if (s.is_string()) cls = enum_from_name<SceneClass>(s.get<std::string>());
      if (!cls) detail::schema(at + ".scene");
      e.scene_override = SceneLabel{*cls, 1.0};
    }
    m.images.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return parse_manifest(text, path.parent_path());
}

// Inverse of parse_manifest for paths already relative to the manifest directory.
inline json manifest_to_json(const DatasetManifest& m) {
  json cm_damage = json::object();
  for (const auto& [id, cls] : m.class_maps.damage) cm_damage[std::to_string(id)] = name_of(cls);
  json cm_component = json::object();
  for (const auto& [id, cls] : m.class_maps.component) cm_component[std::to_string(id)] = name_of(cls);

  json images = json::array();
  for (const auto& e : m.images) {
    json img = {{"id", e.id}};
    if (e.image_path) img["image_path"] = *e.image_path;
    if (e.ground_truth_level) img["ground_truth_level"] = ordinal(*e.ground_truth_level);
    if (e.scene_override) img["scene"] = name_of(e.scene_override->cls);
    if (e.damage_file) img["damage_file"] = *e.damage_file;
    if (e.components_file) img["components_file"] = *e.components_file;
    images.push_back(std::move(img));
  }
  return json{{"class_maps", {{"damage", cm_damage}, {"component", cm_component}}}, {"images", images}};
}

}  // namespace ruinscore
