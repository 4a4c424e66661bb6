#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpn/errors.hpp"

namespace mpn {

// Label value for segments with no event.
inline constexpr int kBackground = 255;

struct DatasetSpec {
  std::uint32_t n_videos = 512;
  std::uint32_t n_segments = 10;  // T
  std::uint32_t n_classes = 5;    // C (28 on the real dataset)
  std::uint32_t n_regions = 4;    // R (49 on the real dataset)
  std::uint32_t p = 32;           // visual dim (512 on the real dataset)
  std::uint32_t q = 16;           // audio dim (128 on the real dataset)
  std::uint32_t min_event_len = 2;
  float noise_sigma = 1.0f;
  float signal_gain = 3.0f;
  std::uint64_t seed = 1;

  void validate() const;
};

struct VideoSample {
  std::uint32_t id = 0;
  std::vector<float> visual;       // [T x R x p], row-major
  std::vector<float> audio;        // [T x q]
  std::vector<int> segment_labels; // length T, values in {0..C-1} or kBackground
  int video_label = 0;
};

struct SplitManifest {
  std::vector<std::uint32_t> train, val, test;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<VideoSample> samples;
  SplitManifest splits;

  const VideoSample& by_id(std::uint32_t id) const;
};

// Class prototypes underlying the generator. Classes 2i and 2i+1 share the
// visual prototype and active region, so vision alone cannot separate them;
// audio prototypes are all distinct.
struct Prototypes {
  std::vector<std::vector<float>> visual;  // C x p, unit norm
  std::vector<std::vector<float>> audio;   // C x q, unit norm
  std::vector<std::uint32_t> region;       // active spatial region per class
};

Prototypes make_prototypes(const DatasetSpec& spec);

// Deterministic synthetic dataset: one contiguous event span per video,
// prototype + Gaussian noise on event segments, pure noise elsewhere,
// 80/10/10 split.
Dataset generate(const DatasetSpec& spec);
SplitManifest make_splits(const DatasetSpec& spec);

// MPNF binary container. Layout: magic "MPNF", version u32, then the spec
// (seven u32 fields, two f32 fields, seed u64), then per video: id u32,
// labels as T bytes (background = 255), visual then audio as little-endian
// f32, row-major.
void write_bundle(const Dataset& ds, const std::string& path);
Dataset read_bundle(const std::string& path);
std::uint64_t bundle_size_bytes(const DatasetSpec& spec);

void write_manifest(const SplitManifest& m, const std::string& path);
SplitManifest read_manifest(const std::string& path);

// Per-segment nearest-prototype classifier over the region-averaged visual
// feature concatenated with the audio feature. Candidates are the C class
// prototypes and the zero vector (background). It has no attention to pick
// out the active region and no cross-modal interaction; it is the
// fusion-free baseline the trained network must beat.
std::vector<int> nearest_prototype_labels(const VideoSample& s, const DatasetSpec& spec,
                                          const Prototypes& protos);
double nearest_prototype_accuracy(const Dataset& ds, const std::vector<std::uint32_t>& ids);

}  // namespace mpn
