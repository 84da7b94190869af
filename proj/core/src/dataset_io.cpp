#include "gld/dataset_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace gld {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor& image) {
  check(image.rank() == 3 && image.dim(2) == 3, "write_png_rgb8: want [H,W,3], got ",
        image.shape_str());
  const int h = image.dim(0), w = image.dim(1);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot open for writing: ", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(str("png write failed: ", path));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(size_t(w) * 3);
  for (int i = 0; i < h; ++i) {
    const float* src = image.data() + int64_t(i) * w * 3;
    for (int j = 0; j < w * 3; ++j) {
      const float v = std::fmin(std::fmax(src[j], 0.0f), 1.0f);
      row[size_t(j)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open: ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(str("png read failed: ", path));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  check(png_get_rowbytes(png, info) == size_t(w) * 3, "png: unexpected row size in ", path);
  Tensor out({h, w, 3});
  std::vector<unsigned char> row(size_t(w) * 3);
  for (int i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    float* dst = out.data() + int64_t(i) * w * 3;
    for (int j = 0; j < w * 3; ++j) dst[j] = float(row[size_t(j)]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_f32(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: ", path);
  f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
  check(f.good(), "write failed: ", path);
}

Tensor read_f32(const std::string& path, std::vector<int> shape) {
  Tensor out(std::move(shape));
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  check(f.good(), "cannot open: ", path);
  const auto bytes = int64_t(f.tellg());
  check(bytes == out.numel() * int64_t(sizeof(float)), "size mismatch in ", path, ": ", bytes,
        " bytes for shape ", out.shape_str());
  f.seekg(0);
  f.read(reinterpret_cast<char*>(out.data()), std::streamsize(bytes));
  check(f.good(), "read failed: ", path);
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open: ", path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  check(f.good(), "cannot open for writing: ", path);
  f << text;
  check(f.good(), "write failed: ", path);
}

namespace {

std::string view_name(int i, const char* stem, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02d.%s", stem, i, ext);
  return buf;
}

}  // namespace

void dataset_write_scene(const std::string& dir, const MultiViewSequence& seq) {
  fs::create_directories(dir);
  std::vector<CameraPose> poses;
  for (size_t i = 0; i < seq.views.size(); ++i) {
    const ViewSample& v = seq.views[i];
    write_png_rgb8(dir + "/" + view_name(int(i), "view", "png"), v.image);
    write_f32(dir + "/" + view_name(int(i), "depth", "f32"), v.depth);
    poses.push_back(v.pose);
  }
  write_text_file(dir + "/cameras.json", poses_to_json(poses));
}

MultiViewSequence dataset_read_scene(const std::string& dir) {
  MultiViewSequence seq;
  seq.scene_id = fs::path(dir).filename().string();
  std::vector<CameraPose> poses = poses_from_json(read_text_file(dir + "/cameras.json"));
  for (size_t i = 0; i < poses.size(); ++i) {
    ViewSample v;
    v.image = read_png_rgb8(dir + "/" + view_name(int(i), "view", "png"));
    v.depth = read_f32(dir + "/" + view_name(int(i), "depth", "f32"),
                       {v.image.dim(0), v.image.dim(1)});
    v.pose = poses[i];
    seq.views.push_back(std::move(v));
  }
  return seq;
}

void manifest_write(const std::string& root, const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["image_size"] = m.image_size;
  j["views"] = m.views;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["corpus_id"] = m.corpus_id;
  j["scenes"] = m.scenes;
  write_text_file(root + "/manifest.json", j.dump(2));
}

DatasetManifest manifest_read(const std::string& root) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(root + "/manifest.json"));
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.image_size = j.at("image_size").get<int>();
  m.views = j.at("views").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.corpus_id = j.at("corpus_id").get<std::string>();
  m.scenes = j.at("scenes").get<std::vector<std::string>>();
  return m;
}

Tensor stack_images(const MultiViewSequence& seq, const std::vector<int>& idx) {
  check(!idx.empty() && !seq.views.empty(), "stack_images: empty input");
  const Tensor& first = seq.views[0].image;
  Tensor out({int(idx.size()), first.dim(0), first.dim(1), 3});
  for (size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = seq.views.at(size_t(idx[i])).image;
    std::memcpy(out.data() + int64_t(i) * img.numel(), img.data(),
                size_t(img.numel()) * sizeof(float));
  }
  return out;
}

Tensor stack_depths(const MultiViewSequence& seq, const std::vector<int>& idx) {
  check(!idx.empty() && !seq.views.empty(), "stack_depths: empty input");
  const Tensor& first = seq.views[0].depth;
  Tensor out({int(idx.size()), first.dim(0), first.dim(1)});
  for (size_t i = 0; i < idx.size(); ++i) {
    const Tensor& d = seq.views.at(size_t(idx[i])).depth;
    std::memcpy(out.data() + int64_t(i) * d.numel(), d.data(), size_t(d.numel()) * sizeof(float));
  }
  return out;
}

std::vector<CameraPose> gather_poses(const MultiViewSequence& seq, const std::vector<int>& idx) {
  std::vector<CameraPose> out;
  for (int i : idx) out.push_back(seq.views.at(size_t(i)).pose);
  return out;
}

DatasetManifest dataset_generate(const std::string& root, uint64_t seed, int count,
                                 const SceneGenConfig& cfg, const std::string& config_hash) {
  fs::create_directories(root);
  DatasetManifest m;
  m.image_size = cfg.image_size;
  m.views = cfg.views;
  m.seed = seed;
  m.config_hash = config_hash;
  m.corpus_id = str("synthetic_v1_", fnv1a_hex(str(seed, "_", count, "_", config_hash)));
  for (int i = 0; i < count; ++i) {
    Rng mix(seed);
    const uint64_t scene_seed = mix.fork(uint64_t(i)).next_u64();
    MultiViewSequence seq = generate_sequence(scene_seed, cfg);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    dataset_write_scene(root + "/" + name, seq);
    m.scenes.push_back(name);
  }
  manifest_write(root, m);
  return m;
}

}  // namespace gld
