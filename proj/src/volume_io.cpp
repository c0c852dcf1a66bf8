#include "mpcl/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mpcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void write_raw(const fs::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t b = 0; b < sizeof(T); ++b) out.put(bytes[sizeof(T) - 1 - b]);
    }
  }
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T)))
    throw Error(ErrorCode::Io, path.string() + " is shorter than its sidecar shape");
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (T& v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t b = 0; b < sizeof(T) / 2; ++b) std::swap(bytes[b], bytes[sizeof(T) - 1 - b]);
      std::memcpy(&v, bytes, sizeof(T));
    }
  }
  return values;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
}

json sidecar(const Shape3& s, const char* dtype, int classes, const std::string& id, SampleSource src) {
  return json{{"shape", {s.h, s.w, s.d}}, {"dtype", dtype}, {"classes", classes}, {"id", id}, {"source", to_string(src)}};
}

Shape3 shape_of(const json& j) {
  const auto& s = j.at("shape");
  return Shape3{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
}

}  // namespace

void write_volume(const fs::path& dir, const VolumeSample& v, int classes) {
  validate_sample(v, classes);
  fs::create_directories(dir);
  write_raw<float>(dir / (v.id + ".raw"), v.image.values());
  write_json(dir / (v.id + ".json"), sidecar(v.shape(), "float32", classes, v.id, v.source));
  if (v.label) {
    write_raw<std::uint8_t>(dir / (v.id + "_label.raw"), v.label->values());
    write_json(dir / (v.id + "_label.json"), sidecar(v.shape(), "uint8", classes, v.id, v.source));
  }
}

VolumeSample read_volume(const fs::path& dir, const std::string& id) {
  try {
    const json meta = read_json(dir / (id + ".json"));
    if (meta.at("dtype").get<std::string>() != "float32")
      throw Error(ErrorCode::Io, id + ": image dtype must be float32");
    VolumeSample v;
    v.id = meta.at("id").get<std::string>();
    v.source = parse_sample_source(meta.value("source", std::string("synthetic")));
    const Shape3 shape = shape_of(meta);
    v.image = Grid<float>(shape, read_raw<float>(dir / (id + ".raw"), shape.voxels()));
    const fs::path label_meta = dir / (id + "_label.json");
    if (fs::exists(label_meta)) {
      const json lm = read_json(label_meta);
      if (lm.at("dtype").get<std::string>() != "uint8") throw Error(ErrorCode::Io, id + ": label dtype must be uint8");
      if (shape_of(lm) != shape) throw Error(ErrorCode::ShapeMismatch, id + ": label sidecar shape differs");
      v.label = LabelGrid(shape, read_raw<std::uint8_t>(dir / (id + "_label.raw"), shape.voxels()));
      validate_sample(v, meta.at("classes").get<int>());
    }
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, id + ": malformed sidecar: " + e.what());
  }
}

void write_manifest(const fs::path& root, const DatasetManifest& m) {
  m.split.validate();
  fs::create_directories(root);
  json j{{"task", m.task},
         {"classes", m.classes},
         {"shape", {m.shape.h, m.shape.w, m.shape.d}},
         {"labeled", m.split.labeled},
         {"unlabeled", m.split.unlabeled},
         {"validation", m.split.validation}};
  write_json(root / "manifest.json", j);
}

DatasetManifest read_manifest(const fs::path& root) {
  const json j = read_json(root / "manifest.json");
  try {
    DatasetManifest m;
    m.task = j.at("task").get<std::string>();
    m.classes = j.at("classes").get<int>();
    m.shape = shape_of(j);
    m.split.labeled = j.at("labeled").get<std::vector<std::string>>();
    m.split.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
    m.split.validation = j.at("validation").get<std::vector<std::string>>();
    m.split.validate();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "malformed manifest: " + std::string(e.what()));
  }
}

std::vector<VolumeSample> read_all_volumes(const fs::path& root, const DatasetManifest& m) {
  std::vector<VolumeSample> out;
  for (const auto* list : {&m.split.labeled, &m.split.unlabeled, &m.split.validation})
    for (const auto& id : *list) out.push_back(read_volume(root / "volumes", id));
  return out;
}

}  // namespace mpcl
