#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gld/scenegen.hpp"
#include "gld/tensor.hpp"

namespace gld {

/// image: [H,W,3] in [0,1]; written as 8-bit RGB. Values are rounded to the
/// 8-bit grid, so tensors produced by render_view round-trip bit-exactly.
void write_png_rgb8(const std::string& path, const Tensor& image);
Tensor read_png_rgb8(const std::string& path);

/// Raw little-endian float32, row-major, no header.
void write_f32(const std::string& path, const Tensor& t);
Tensor read_f32(const std::string& path, std::vector<int> shape);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Scene directory layout: view_%02d.png, depth_%02d.f32, cameras.json.
void dataset_write_scene(const std::string& dir, const MultiViewSequence& seq);
MultiViewSequence dataset_read_scene(const std::string& dir);

struct DatasetManifest {
  int version = 1;
  int image_size = 0;
  int views = 0;
  uint64_t seed = 0;
  std::string config_hash;  // generator settings fingerprint
  std::string corpus_id;    // identifies dataset + encoding regime downstream
  std::vector<std::string> scenes;
};

void manifest_write(const std::string& root, const DatasetManifest& m);
DatasetManifest manifest_read(const std::string& root);

/// Generate `count` scenes under root and write the manifest.
DatasetManifest dataset_generate(const std::string& root, uint64_t seed, int count,
                                 const SceneGenConfig& cfg, const std::string& config_hash);

/// Gather selected views into batch tensors.
Tensor stack_images(const MultiViewSequence& seq, const std::vector<int>& idx);  // [V,H,W,3]
Tensor stack_depths(const MultiViewSequence& seq, const std::vector<int>& idx);  // [V,H,W]
std::vector<CameraPose> gather_poses(const MultiViewSequence& seq, const std::vector<int>& idx);

}  // namespace gld
