#include "dsts/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "dsts/error.hpp"

namespace dsts {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'S', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void block(const std::string& name, const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out_.write(name.data(), static_cast<std::streamsize>(name.size()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) pod<std::uint64_t>(static_cast<std::uint64_t>(d));
    out_.write(reinterpret_cast<const char*>(t.storage().data()),
               static_cast<std::streamsize>(t.storage().size() * sizeof(double)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    raw(&v, sizeof v);
    return v;
  }
  std::string text(std::uint64_t limit) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) throw IntegrityError(path_ + ": implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  void raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw IntegrityError(path_ + ": truncated checkpoint");
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

KeyValues to_key_values(const ModelConfig& c) {
  KeyValues kv;
  kv.set("in_channels", std::to_string(c.in_channels));
  kv.set("clip_t", std::to_string(c.clip_t));
  kv.set("clip_h", std::to_string(c.clip_h));
  kv.set("clip_w", std::to_string(c.clip_w));
  kv.set("channels", std::to_string(c.channels));
  kv.set("neurons", std::to_string(c.neurons));
  kv.set("layers", std::to_string(c.layers));
  kv.set("classes", std::to_string(c.classes));
  kv.set("temperature", format_double(c.temperature));
  kv.set("dsts", c.dsts_enabled ? "true" : "false");
  kv.set("sts", c.sts_enabled ? "true" : "false");
  kv.set("gates", c.gates_enabled ? "true" : "false");
  kv.set("synapse", c.synapse_enabled ? "true" : "false");
  kv.set("score_init_std", format_double(c.score_init_std));
  return kv;
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig c;
  kv.get("in_channels", c.in_channels);
  kv.get("clip_t", c.clip_t);
  kv.get("clip_h", c.clip_h);
  kv.get("clip_w", c.clip_w);
  kv.get("channels", c.channels);
  kv.get("neurons", c.neurons);
  kv.get("layers", c.layers);
  kv.get("classes", c.classes);
  kv.get("temperature", c.temperature);
  kv.get("dsts", c.dsts_enabled);
  kv.get("sts", c.sts_enabled);
  kv.get("gates", c.gates_enabled);
  kv.get("synapse", c.synapse_enabled);
  kv.get("score_init_std", c.score_init_std);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& run_config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write checkpoint " + path.string());
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.text(to_key_values(model.config()).to_text());
  w.text(run_config);
  w.pod<std::uint64_t>(model.params().size() + 2 * model.bn_stats().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) w.block(model.param_info()[i].name, model.params()[i]);
  for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
    w.block(model.bn_names()[i] + ".running_mean", model.bn_stats()[i].running_mean);
    w.block(model.bn_names()[i] + ".running_var", model.bn_stats()[i].running_var);
  }
  if (!out) throw FileError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IntegrityError(path.string() + " is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  constexpr std::uint64_t kTextLimit = 1 << 20;
  const ModelConfig config = model_config_from(KeyValues::parse(r.text(kTextLimit)));
  std::string run_config = r.text(kTextLimit);

  // The seed only fills values that are overwritten below.
  LoadedCheckpoint loaded{Model(config, 0), std::move(run_config)};
  Model& model = loaded.model;
  std::map<std::string, Tensor*> slots;
  for (std::size_t i = 0; i < model.params().size(); ++i) slots[model.param_info()[i].name] = &model.params()[i];
  for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
    slots[model.bn_names()[i] + ".running_mean"] = &model.bn_stats()[i].running_mean;
    slots[model.bn_names()[i] + ".running_var"] = &model.bn_stats()[i].running_var;
  }

  const auto blocks = r.pod<std::uint64_t>();
  if (blocks != slots.size()) {
    throw IntegrityError(path.string() + ": " + std::to_string(blocks) + " blocks, model expects " +
                         std::to_string(slots.size()));
  }
  for (std::uint64_t b = 0; b < blocks; ++b) {
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > 4096) throw IntegrityError(path.string() + ": implausible block name length");
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    auto it = slots.find(name);
    if (it == slots.end() || it->second == nullptr) {
      throw IntegrityError(path.string() + ": unexpected or repeated block '" + name + "'");
    }
    Tensor& dst = *it->second;
    const auto rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.pod<std::uint64_t>());
    if (shape != dst.shape()) {
      throw IntegrityError(path.string() + ": block '" + name + "' has shape " + to_string(shape) + ", expected " +
                           to_string(dst.shape()));
    }
    r.raw(dst.storage().data(), dst.storage().size() * sizeof(double));
    it->second = nullptr;
  }
  if (!r.at_end()) throw IntegrityError(path.string() + ": trailing bytes after the last block");
  return loaded;
}

}  // namespace dsts
