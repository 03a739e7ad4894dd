#pragma once

#include <optional>
#include <string>

#include "frame/generative.hpp"
#include "frame/model.hpp"

namespace frame {

// FRM1 model checkpoint: magic, kind code (0 nonstationary, 1 stationary,
// 2 generative layer), sigma^2, image geometry, f64 weight payload, embedded
// FBK1 bank. Little-endian throughout.
void save_checkpoint(const NonStationaryFrame& model, const std::string& path);
void save_checkpoint(const StationaryFrame& model, const std::string& path);
void save_checkpoint(const GenerativeLayer& layer, int img_h, int img_w,
                     const std::string& path);

struct LoadedCheckpoint {
  int kind = -1;
  int img_h = 0, img_w = 0;
  double sigma_sq = 1.0;
  std::optional<NonStationaryFrame> nonstationary;
  std::optional<StationaryFrame> stationary;
  std::optional<GenerativeLayer> generative;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Serialized forms, for byte-level tests and atomic writes.
std::vector<unsigned char> serialize_checkpoint(const NonStationaryFrame& m);
std::vector<unsigned char> serialize_checkpoint(const StationaryFrame& m);
std::vector<unsigned char> serialize_checkpoint(const GenerativeLayer& layer,
                                                int img_h, int img_w);

// Writes via a temp file in the same directory plus rename, so interrupted
// runs never leave a partial file behind.
void atomic_write_file(const std::string& path,
                       const std::vector<unsigned char>& bytes);
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace frame
