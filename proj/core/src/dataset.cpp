#include "dsts/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dsts/error.hpp"

namespace dsts {

namespace {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

// Offset along the motion at frame t: 0 at the first frame, `travel` at the
// last, and symmetric so that a reversed clip is an exact frame reversal.
int progress(int t, int frames, int travel) {
  if (2 * t > frames - 1) return travel - progress(frames - 1 - t, frames, travel);
  return static_cast<int>(std::lround(static_cast<double>(t) * travel / (frames - 1)));
}

float to_f32(double v) { return static_cast<float>(v); }

}  // namespace

const char* to_string(PairAxis axis) { return axis == PairAxis::Spatial ? "spatial" : "temporal"; }

PairAxis parse_pair_axis(const std::string& text) {
  if (text == "spatial") return PairAxis::Spatial;
  if (text == "temporal") return PairAxis::Temporal;
  throw InputError("unknown pair axis '" + text + "'");
}

void DatasetSpec::validate() const {
  if (classes < 2 || classes % 2 != 0) throw ConfigError("classes must be even and >= 2");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (frames < 3) throw ConfigError("need at least 3 frames to render a trajectory");
  if (travel < 0 || travel % 2 != 0) throw ConfigError("travel must be even and non-negative");
  if (jitter < 0) throw ConfigError("jitter must be non-negative");
  if (square_size < 2 || square_size > height / pairs()) {
    throw ConfigError("square_size must be in [2, height / pairs] = [2, " + std::to_string(height / pairs()) + "]");
  }
  if (notch < 1 || notch >= square_size) throw ConfigError("notch must be in [1, square_size)");
  if (!(pixel_noise >= 0.0)) throw ConfigError("pixel_noise must be non-negative");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must be in [0, 1]");
  const int reach = travel / 2 + jitter;
  if ((width - square_size) / 2 < reach) {
    throw ConfigError("clip width " + std::to_string(width) + " is too small for squares of " +
                      std::to_string(square_size) + " moving " + std::to_string(reach) + " pixels off centre");
  }
}

Tensor render_clip(const DatasetSpec& spec, int label, const Trajectory& trajectory) {
  if (label < 0 || label >= spec.classes) throw InputError("label out of range");
  const int band = spec.height / spec.pairs();
  const int size = spec.square_size;
  if (std::abs(trajectory.shift) > spec.jitter || trajectory.lane < 0 || trajectory.lane > band - size) {
    throw InputError("trajectory outside the jitter range");
  }
  const int pair = label / 2;
  const bool second = label % 2 == 1;
  const int x0 = (spec.width - size) / 2 + trajectory.shift;
  const int y = pair * band + trajectory.lane;

  Tensor clip(spec.clip_shape(), to_f32(spec.background));
  const std::int64_t frame_size = static_cast<std::int64_t>(spec.height) * spec.width;
  for (int t = 0; t < spec.frames; ++t) {
    const bool reversed = second && spec.axis_of_pair(pair) == PairAxis::Temporal;
    const int along = progress(reversed ? spec.frames - 1 - t : t, spec.frames, spec.travel) - spec.travel / 2;
    const int x = x0 + along;
    const bool notched = second && spec.axis_of_pair(pair) == PairAxis::Spatial && t >= spec.frames - 2;
    for (int c = 0; c < spec.channels; ++c) {
      double* frame = clip.data().data() + (static_cast<std::int64_t>(c) * spec.frames + t) * frame_size;
      for (int r = 0; r < size; ++r) {
        for (int q = 0; q < size; ++q) {
          if (notched && r < spec.notch && q >= size - spec.notch) continue;  // top-right corner
          frame[static_cast<std::int64_t>(y + r) * spec.width + (x + q)] = to_f32(spec.foreground);
        }
      }
    }
  }
  return clip;
}

std::vector<VideoSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<VideoSample> samples;
  samples.reserve(static_cast<std::size_t>(spec.classes) * spec.samples_per_class);
  for (int label = 0; label < spec.classes; ++label) {
    for (int k = 0; k < spec.samples_per_class; ++k) {
      VideoSample s;
      s.id = static_cast<std::int64_t>(samples.size());
      // Each sample has its own stream, so samples can be rendered independently.
      Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(s.id));
      const int lanes = spec.height / spec.pairs() - spec.square_size + 1;
      Trajectory traj;
      traj.shift = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * spec.jitter + 1))) - spec.jitter;
      traj.lane = static_cast<int>(rng.below(static_cast<std::uint64_t>(lanes)));
      s.clip = render_clip(spec, label, traj);
      if (spec.pixel_noise > 0.0) {
        for (auto& v : s.clip.storage()) v = to_f32(std::clamp(v + rng.normal(0.0, spec.pixel_noise), 0.0, 1.0));
      }
      s.label = label;
      s.pair_id = label / 2;
      s.pair_axis = spec.axis_of_pair(s.pair_id);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

DatasetSplit split_dataset(const std::vector<VideoSample>& samples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must be in [0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  Rng rng = Rng::derive(seed, 0x5917);
  std::vector<bool> in_train(samples.size(), false);
  for (auto& [label, members] : by_class) {
    const auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    rng.shuffle(members);
    for (std::size_t k = 0; k < take; ++k) in_train[members[k]] = true;
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < samples.size(); ++i) (in_train[i] ? split.train : split.test).push_back(samples[i]);
  return split;
}

DisjointBatches sample_disjoint_batches(std::size_t pool, int batch, Rng& rng) {
  if (batch < 2) throw ConfigError("disjoint batches need a batch size of at least 2");
  if (pool < static_cast<std::size_t>(batch)) {
    throw ConfigError("cannot draw " + std::to_string(batch) + " distinct samples from " + std::to_string(pool));
  }
  // Partial Fisher-Yates: the first `batch` slots become a uniform sample
  // without replacement.
  std::vector<std::size_t> order(pool);
  for (std::size_t i = 0; i < pool; ++i) order[i] = i;
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch); ++i) {
    std::swap(order[i], order[i + rng.below(pool - i)]);
  }
  const auto half = static_cast<std::size_t>(batch / 2);
  DisjointBatches out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.begin() + batch);
  return out;
}

Tensor stack_clips(std::span<const VideoSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("stack_clips: no samples selected");
  const Shape clip = samples[indices[0]].clip.shape();
  Shape shape{static_cast<std::int64_t>(indices.size())};
  shape.insert(shape.end(), clip.begin(), clip.end());
  Tensor out(shape, 0.0);
  const std::int64_t n = numel(clip);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Tensor& c = samples[indices[k]].clip;
    if (c.shape() != clip) throw InputError("stack_clips: clips differ in shape");
    std::copy(c.storage().begin(), c.storage().end(), out.data().begin() + static_cast<std::int64_t>(k) * n);
  }
  return out;
}

std::vector<int> gather_labels(std::span<const VideoSample> samples, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (auto i : indices) labels.push_back(samples[i].label);
  return labels;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifestMagic = "dsts-dataset 1";

void write_spec(std::ostream& out, const DatasetSpec& s) {
  out << "classes=" << s.classes << "\nsamples_per_class=" << s.samples_per_class << "\nchannels=" << s.channels
      << "\nframes=" << s.frames << "\nheight=" << s.height << "\nwidth=" << s.width << "\nsquare_size="
      << s.square_size << "\ntravel=" << s.travel << "\njitter=" << s.jitter << "\nnotch=" << s.notch;
  out.precision(17);
  out << "\npixel_noise=" << s.pixel_noise << "\ntrain_fraction=" << s.train_fraction
      << "\nbackground=" << s.background << "\nforeground=" << s.foreground << "\n";
}

}  // namespace

std::uint64_t content_hash(const std::vector<VideoSample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    const std::int32_t label = s.label;
    feed(&label, sizeof label);
    for (double v : s.clip.storage()) {
      const float f = static_cast<float>(v);
      feed(&f, sizeof f);
    }
  }
  return h;
}

void save_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::uint64_t seed,
                  const std::vector<VideoSample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream clips(dir / "clips.f32", std::ios::binary | std::ios::trunc);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!clips || !manifest) throw FileError("cannot write dataset files in " + dir.string());

  manifest << kManifestMagic << "\n";
  write_spec(manifest, spec);
  manifest << "seed=" << seed << "\nhash=" << content_hash(samples) << "\nrecords=" << samples.size() << "\n";
  std::uint64_t offset = 0;
  for (const auto& s : samples) {
    if (s.clip.shape() != spec.clip_shape()) throw InputError("save_dataset: clip shape does not match the spec");
    manifest << s.id << ' ' << s.label << ' ' << s.pair_id << ' ' << to_string(s.pair_axis) << ' ' << offset << "\n";
    for (double v : s.clip.storage()) {
      const float f = static_cast<float>(v);
      clips.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    offset += static_cast<std::uint64_t>(s.clip.size()) * sizeof(float);
  }
  if (!clips || !manifest) throw FileError("failed writing dataset files in " + dir.string());
}

DatasetFiles load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FileError("missing dataset manifest in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || line != kManifestMagic) {
    throw IntegrityError("not a dataset manifest: " + (dir / "manifest.txt").string());
  }

  std::map<std::string, std::string> kv;
  std::size_t records = 0;
  while (std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IntegrityError("malformed manifest header line: " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "records") {
      records = std::stoull(value);
      break;
    }
    kv[key] = value;
  }
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IntegrityError("manifest lacks '" + key + "'");
    return it->second;
  };

  DatasetFiles out;
  DatasetSpec& s = out.spec;
  try {
    s.classes = std::stoi(get("classes"));
    s.samples_per_class = std::stoi(get("samples_per_class"));
    s.channels = std::stoi(get("channels"));
    s.frames = std::stoi(get("frames"));
    s.height = std::stoi(get("height"));
    s.width = std::stoi(get("width"));
    s.square_size = std::stoi(get("square_size"));
    s.travel = std::stoi(get("travel"));
    s.jitter = std::stoi(get("jitter"));
    s.notch = std::stoi(get("notch"));
    s.pixel_noise = std::stod(get("pixel_noise"));
    s.train_fraction = std::stod(get("train_fraction"));
    s.background = std::stod(get("background"));
    s.foreground = std::stod(get("foreground"));
    out.seed = std::stoull(get("seed"));
  } catch (const std::logic_error&) {
    throw IntegrityError("manifest header holds a non-numeric value");
  }
  const std::uint64_t recorded_hash = std::stoull(get("hash"));

  std::ifstream clips(dir / "clips.f32", std::ios::binary);
  if (!clips) throw FileError("missing clip tensor file in " + dir.string());
  clips.seekg(0, std::ios::end);
  const auto file_bytes = static_cast<std::uint64_t>(clips.tellg());
  clips.seekg(0);
  const std::int64_t per_clip = numel(s.clip_shape());
  const std::uint64_t clip_bytes = static_cast<std::uint64_t>(per_clip) * sizeof(float);
  if (file_bytes != records * clip_bytes) {
    throw IntegrityError("clip file holds " + std::to_string(file_bytes) + " bytes, manifest implies " +
                         std::to_string(records * clip_bytes));
  }

  std::vector<float> buffer(static_cast<std::size_t>(per_clip));
  for (std::size_t r = 0; r < records; ++r) {
    if (!std::getline(manifest, line)) throw IntegrityError("manifest ends after " + std::to_string(r) + " records");
    std::istringstream in(line);
    VideoSample sample;
    std::string axis;
    std::uint64_t offset = 0;
    if (!(in >> sample.id >> sample.label >> sample.pair_id >> axis >> offset)) {
      throw IntegrityError("malformed manifest record: " + line);
    }
    sample.pair_axis = parse_pair_axis(axis);
    if (sample.label < 0 || sample.label >= s.classes || sample.pair_id != sample.label / 2 ||
        sample.pair_axis != s.axis_of_pair(sample.pair_id)) {
      throw IntegrityError("inconsistent manifest record: " + line);
    }
    if (offset != r * clip_bytes) throw IntegrityError("unexpected byte offset in record: " + line);
    clips.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(clip_bytes));
    sample.clip = Tensor(s.clip_shape(), std::vector<double>(buffer.begin(), buffer.end()));
    out.samples.push_back(std::move(sample));
  }
  if (content_hash(out.samples) != recorded_hash) throw IntegrityError("dataset content hash mismatch");
  return out;
}

}  // namespace dsts
