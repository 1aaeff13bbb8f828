#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dsts/random.hpp"
#include "dsts/tensor.hpp"

namespace dsts {

/// Which aspect separates the two classes of a similar pair.
enum class PairAxis { Spatial, Temporal };
const char* to_string(PairAxis axis);
PairAxis parse_pair_axis(const std::string& text);

struct VideoSample {
  std::int64_t id = 0;
  Tensor clip;  // C x T x H x W, values in [0, 1]
  int label = 0;
  int pair_id = 0;
  PairAxis pair_axis = PairAxis::Spatial;
};

/// Bright squares moving horizontally on a dark noisy background. Classes come
/// in sibling pairs 2p and 2p+1, and pair p owns the p-th horizontal band of
/// the frame. Even pairs are temporal: the siblings run the same path in
/// opposite directions. Odd pairs are spatial: the same left-to-right motion,
/// but the second sibling's square loses a corner in the last two frames.
struct DatasetSpec {
  int classes = 8;
  int samples_per_class = 100;
  int channels = 1;
  int frames = 8;
  int height = 16;
  int width = 16;
  double pixel_noise = 0.05;
  double train_fraction = 0.8;

  // Rendering geometry.
  int square_size = 4;  // at most height / pairs
  int travel = 6;       // horizontal pixels covered over the clip, even
  int jitter = 2;       // max horizontal shift of a sample's path
  int notch = 2;        // side of the corner removed from spatial siblings
  double background = 0.1;
  double foreground = 0.9;

  void validate() const;
  int pairs() const { return classes / 2; }
  PairAxis axis_of_pair(int pair) const { return pair % 2 == 0 ? PairAxis::Temporal : PairAxis::Spatial; }
  Shape clip_shape() const { return {channels, frames, height, width}; }
};

/// Draws everything random about one sample besides pixel noise.
struct Trajectory {
  int shift = 0;  // horizontal, in [-jitter, jitter]
  int lane = 0;   // vertical offset inside the band, in [0, band height - square_size]
};

/// Renders a clip without noise.
Tensor render_clip(const DatasetSpec& spec, int label, const Trajectory& trajectory);

/// Balanced and ordered by class: samples_per_class samples of class 0, then
/// class 1, and so on. Sample ids are 0..n-1.
std::vector<VideoSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct DatasetSplit {
  std::vector<VideoSample> train;
  std::vector<VideoSample> test;
};

/// Stratified: each class contributes round(fraction * its count) samples to
/// train, picked by a seeded shuffle. Both halves keep dataset order.
DatasetSplit split_dataset(const std::vector<VideoSample>& samples, double train_fraction, std::uint64_t seed);

/// Two disjoint index sets into a pool of `pool` samples, of sizes
/// floor(batch/2) and ceil(batch/2).
struct DisjointBatches {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
DisjointBatches sample_disjoint_batches(std::size_t pool, int batch, Rng& rng);

/// Stacks clips into a B x C x T x H x W tensor.
Tensor stack_clips(std::span<const VideoSample> samples, std::span<const std::size_t> indices);
std::vector<int> gather_labels(std::span<const VideoSample> samples, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// On-disk form: `manifest.txt` holds a header of key=value lines, a `records`
// line, then one "id label pair_id pair_axis byte_offset" line per sample.
// `clips.f32` holds the clips back to back as little-endian float32.

struct DatasetFiles {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<VideoSample> samples;
};

void save_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::uint64_t seed,
                  const std::vector<VideoSample>& samples);
DatasetFiles load_dataset(const std::filesystem::path& dir);

/// FNV-1a over the float32 clip bytes and labels.
std::uint64_t content_hash(const std::vector<VideoSample>& samples);

}  // namespace dsts
