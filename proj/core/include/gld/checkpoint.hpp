#pragma once

#include <string>

#include "gld/nn.hpp"

namespace gld {

/// Checkpoint container: an 8-byte magic, a little-endian u32 header length,
/// a JSON header, then the raw float32 parameter blobs in header order. The
/// header carries a mandatory format version, the model kind, and free-form
/// metadata (config JSON, fingerprints, normalization stats).
struct CheckpointInfo {
  int version = 0;
  std::string kind;
  std::string meta_json;
};

void checkpoint_save(const std::string& path, const std::string& kind,
                     const nn::ParamStore& params, const std::string& meta_json);

/// Header only; cheap way to inspect kind and metadata.
CheckpointInfo checkpoint_peek(const std::string& path);

/// Loads parameters into an already-constructed store: every store entry
/// must exist in the file with a matching shape. When expect_kind is
/// non-empty a kind mismatch is an error.
CheckpointInfo checkpoint_load(const std::string& path, const std::string& expect_kind,
                               nn::ParamStore& params);

}  // namespace gld
