#include "mpn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpn/model.hpp"
#include "mpn/rng.hpp"

namespace mpn {

void DatasetSpec::validate() const {
  if (n_videos == 0) throw ValueError("dataset spec: n_videos must be positive");
  if (n_segments == 0 || n_classes == 0 || n_regions == 0 || p == 0 || q == 0)
    throw ValueError("dataset spec: zero extent");
  if (min_event_len < 2) throw ValueError("dataset spec: min_event_len must be >= 2");
  if (min_event_len > n_segments)
    throw ValueError("dataset spec: min_event_len exceeds segment count");
  if (noise_sigma < 0.0f) throw ValueError("dataset spec: negative noise_sigma");
  if (n_classes >= 255) throw ValueError("dataset spec: n_classes must be < 255");
}

const VideoSample& Dataset::by_id(std::uint32_t id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw DataError("no video with id " + std::to_string(id));
}

namespace {

std::vector<float> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    const double g = rng.normal();
    x = static_cast<float>(g);
    norm2 += g * g;
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-12)));
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

Prototypes make_prototypes(const DatasetSpec& spec) {
  Rng rng(Rng::derive(spec.seed, 0xC1A55));
  Prototypes pr;
  pr.visual.resize(spec.n_classes);
  pr.audio.resize(spec.n_classes);
  pr.region.resize(spec.n_classes);
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    if (c % 2 == 1) {
      // Pair classes (2i, 2i+1) on the visual side.
      pr.visual[c] = pr.visual[c - 1];
      pr.region[c] = pr.region[c - 1];
    } else {
      pr.visual[c] = unit_vector(rng, spec.p);
      pr.region[c] = static_cast<std::uint32_t>(rng.below(spec.n_regions));
    }
    pr.audio[c] = unit_vector(rng, spec.q);
  }
  return pr;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  const Prototypes protos = make_prototypes(spec);
  Dataset ds;
  ds.spec = spec;
  ds.samples.resize(spec.n_videos);

  for (std::uint32_t i = 0; i < spec.n_videos; ++i) {
    Rng rng(Rng::derive(spec.seed, 1 + i));
    VideoSample& s = ds.samples[i];
    s.id = i;
    s.video_label = static_cast<int>(i % spec.n_classes);  // balanced classes
    const std::uint32_t len = spec.min_event_len +
        static_cast<std::uint32_t>(rng.below(spec.n_segments - spec.min_event_len + 1));
    const std::uint32_t start =
        static_cast<std::uint32_t>(rng.below(spec.n_segments - len + 1));
    s.segment_labels.assign(spec.n_segments, kBackground);
    for (std::uint32_t t = start; t < start + len; ++t) s.segment_labels[t] = s.video_label;

    s.visual.resize(static_cast<std::size_t>(spec.n_segments) * spec.n_regions * spec.p);
    s.audio.resize(static_cast<std::size_t>(spec.n_segments) * spec.q);
    const auto& vproto = protos.visual[static_cast<std::size_t>(s.video_label)];
    const auto& aproto = protos.audio[static_cast<std::size_t>(s.video_label)];
    const std::uint32_t region = protos.region[static_cast<std::size_t>(s.video_label)];

    for (std::uint32_t t = 0; t < spec.n_segments; ++t) {
      const bool event = s.segment_labels[t] != kBackground;
      for (std::uint32_t r = 0; r < spec.n_regions; ++r)
        for (std::uint32_t j = 0; j < spec.p; ++j) {
          float x = spec.noise_sigma * static_cast<float>(rng.normal());
          if (event && r == region) x += spec.signal_gain * vproto[j];
          s.visual[(static_cast<std::size_t>(t) * spec.n_regions + r) * spec.p + j] = x;
        }
      for (std::uint32_t j = 0; j < spec.q; ++j) {
        float x = spec.noise_sigma * static_cast<float>(rng.normal());
        if (event) x += spec.signal_gain * aproto[j];
        s.audio[static_cast<std::size_t>(t) * spec.q + j] = x;
      }
    }
  }

  ds.splits = make_splits(spec);
  return ds;
}

// 80/10/10 split over a seeded shuffle of the ids.
SplitManifest make_splits(const DatasetSpec& spec) {
  std::vector<std::uint32_t> ids(spec.n_videos);
  for (std::uint32_t i = 0; i < spec.n_videos; ++i) ids[i] = i;
  Rng srng(Rng::derive(spec.seed, 0x5B117));
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[srng.below(i)]);
  const std::size_t n_train = (spec.n_videos * 8) / 10;
  const std::size_t n_val = spec.n_videos / 10;
  SplitManifest m;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return m;
}

// --------------------------------------------------------------------------
// MPNF container

namespace {

constexpr char kMagic[4] = {'M', 'P', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  // Little-endian byte order; x86/arm64 memcpy is already little-endian,
  // and the test suite pins the byte layout.
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (is.gcount() != sizeof(T)) throw DataError(std::string("truncated file reading ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

std::uint64_t bundle_size_bytes(const DatasetSpec& spec) {
  const std::uint64_t header = 4 + 4 + 7 * 4 + 2 * 4 + 8;
  const std::uint64_t per_video =
      4 + spec.n_segments +
      4ull * (static_cast<std::uint64_t>(spec.n_segments) * spec.n_regions * spec.p +
              static_cast<std::uint64_t>(spec.n_segments) * spec.q);
  return header + per_video * spec.n_videos;
}

void write_bundle(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  const DatasetSpec& s = ds.spec;
  put<std::uint32_t>(os, s.n_videos);
  put<std::uint32_t>(os, s.n_segments);
  put<std::uint32_t>(os, s.n_classes);
  put<std::uint32_t>(os, s.n_regions);
  put<std::uint32_t>(os, s.p);
  put<std::uint32_t>(os, s.q);
  put<std::uint32_t>(os, s.min_event_len);
  put<float>(os, s.noise_sigma);
  put<float>(os, s.signal_gain);
  put<std::uint64_t>(os, s.seed);
  for (const auto& v : ds.samples) {
    put<std::uint32_t>(os, v.id);
    for (int lab : v.segment_labels)
      os.put(static_cast<char>(static_cast<unsigned char>(lab)));
    for (float x : v.visual) put<float>(os, x);
    for (float x : v.audio) put<float>(os, x);
  }
  if (!os) throw DataError("write failure on " + path);
}

Dataset read_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad magic in " + path + " (not an MPNF bundle)");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw DataError("unsupported MPNF version " + std::to_string(version) + " in " + path);
  Dataset ds;
  DatasetSpec& s = ds.spec;
  s.n_videos = get<std::uint32_t>(is, "n_videos");
  s.n_segments = get<std::uint32_t>(is, "n_segments");
  s.n_classes = get<std::uint32_t>(is, "n_classes");
  s.n_regions = get<std::uint32_t>(is, "n_regions");
  s.p = get<std::uint32_t>(is, "p");
  s.q = get<std::uint32_t>(is, "q");
  s.min_event_len = get<std::uint32_t>(is, "min_event_len");
  s.noise_sigma = get<float>(is, "noise_sigma");
  s.signal_gain = get<float>(is, "signal_gain");
  s.seed = get<std::uint64_t>(is, "seed");
  s.validate();
  ds.samples.resize(s.n_videos);
  for (auto& v : ds.samples) {
    v.id = get<std::uint32_t>(is, "video id");
    v.segment_labels.resize(s.n_segments);
    v.video_label = kBackground;
    for (auto& lab : v.segment_labels) {
      char b;
      is.get(b);
      if (!is) throw DataError("truncated file reading labels");
      lab = static_cast<int>(static_cast<unsigned char>(b));
      if (lab != kBackground) v.video_label = lab;
    }
    v.visual.resize(static_cast<std::size_t>(s.n_segments) * s.n_regions * s.p);
    v.audio.resize(static_cast<std::size_t>(s.n_segments) * s.q);
    for (auto& x : v.visual) x = get<float>(is, "visual features");
    for (auto& x : v.audio) x = get<float>(is, "audio features");
  }
  // Splits are deterministic from the spec; rebuild instead of storing.
  ds.splits = make_splits(s);
  return ds;
}

void write_manifest(const SplitManifest& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  auto dump = [&os](const char* name, const std::vector<std::uint32_t>& ids) {
    for (auto id : ids) os << name << '\t' << id << '\n';
  };
  dump("train", m.train);
  dump("val", m.val);
  dump("test", m.test);
  if (!os) throw DataError("write failure on " + path);
}

SplitManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  SplitManifest m;
  std::string split;
  std::uint32_t id;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (!(ls >> split >> id)) throw DataError("malformed manifest line: " + line);
    if (split == "train")
      m.train.push_back(id);
    else if (split == "val")
      m.val.push_back(id);
    else if (split == "test")
      m.test.push_back(id);
    else
      throw DataError("unknown split name: " + split);
  }
  return m;
}

// --------------------------------------------------------------------------
// Nearest-prototype baseline

// The baseline deliberately has no cross-modal machinery: without
// audio-guided attention it cannot tell which spatial region carries the
// signal, so it sees the region-averaged visual features next to the raw
// audio features and matches them against class prototypes (plus the zero
// vector for background). Beating it demonstrates that learning where to
// look, and fusing the modalities, adds value over plain template matching.
std::vector<int> nearest_prototype_labels(const VideoSample& s, const DatasetSpec& spec,
                                          const Prototypes& protos) {
  std::vector<int> labels(spec.n_segments, kBackground);
  std::vector<double> pooled(spec.p);
  for (std::uint32_t t = 0; t < spec.n_segments; ++t) {
    const float* vis =
        s.visual.data() + static_cast<std::size_t>(t) * spec.n_regions * spec.p;
    const float* aud = s.audio.data() + static_cast<std::size_t>(t) * spec.q;
    std::fill(pooled.begin(), pooled.end(), 0.0);
    for (std::uint32_t r = 0; r < spec.n_regions; ++r)
      for (std::uint32_t j = 0; j < spec.p; ++j) pooled[j] += double(vis[r * spec.p + j]);
    for (auto& x : pooled) x /= spec.n_regions;
    // Background candidate is the zero vector: distance^2 = ||x||^2.
    double best = 0.0;
    for (std::uint32_t j = 0; j < spec.p; ++j) best += pooled[j] * pooled[j];
    for (std::uint32_t j = 0; j < spec.q; ++j) best += double(aud[j]) * aud[j];
    int best_label = kBackground;
    for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
      double d2 = 0.0;
      // Region-averaging dilutes the visual prototype by 1/R.
      for (std::uint32_t j = 0; j < spec.p; ++j) {
        const double mean =
            double(spec.signal_gain) * protos.visual[c][j] / spec.n_regions;
        const double diff = pooled[j] - mean;
        d2 += diff * diff;
      }
      for (std::uint32_t j = 0; j < spec.q; ++j) {
        const double diff = double(aud[j]) - double(spec.signal_gain) * protos.audio[c][j];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        best_label = static_cast<int>(c);
      }
    }
    labels[t] = best_label;
  }
  return labels;
}

double nearest_prototype_accuracy(const Dataset& ds, const std::vector<std::uint32_t>& ids) {
  const Prototypes protos = make_prototypes(ds.spec);
  std::size_t hits = 0, total = 0;
  for (auto id : ids) {
    const VideoSample& s = ds.by_id(id);
    const auto pred = nearest_prototype_labels(s, ds.spec, protos);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      hits += pred[t] == s.segment_labels[t];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace mpn
