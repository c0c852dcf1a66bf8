#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpcl/volume.hpp"

namespace mpcl {

/// On-disk volume: `<dir>/<id>.raw` (little-endian float32, C-order) with a `<id>.json` sidecar
/// {"shape":[H,W,D],"dtype":"float32","classes":C,"id":...,"source":...}. A label, when present, is
/// stored next to it as `<id>_label.raw` (uint8) with its own sidecar.
void write_volume(const std::filesystem::path& dir, const VolumeSample& v, int classes);
VolumeSample read_volume(const std::filesystem::path& dir, const std::string& id);

/// Dataset manifest at `<root>/manifest.json`.
struct DatasetManifest {
  std::string task;
  int classes = 2;
  Shape3 shape{};
  DatasetSplit split;
};

void write_manifest(const std::filesystem::path& root, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& root);

/// Loads every id named in the manifest from `<root>/volumes`.
std::vector<VolumeSample> read_all_volumes(const std::filesystem::path& root, const DatasetManifest& m);

}  // namespace mpcl
