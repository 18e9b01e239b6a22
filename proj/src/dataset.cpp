#include "lfd/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lfd/bundle_check.hpp"

namespace lfd::store {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr char kSeqMagic[4] = {'L', 'F', 'D', 'S'};
constexpr char kModelMagic[4] = {'L', 'F', 'D', 'M'};
constexpr std::size_t kSeqHeaderBytes = 4 + 6 * 4;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(std::span<const float> v) { bytes(v.data(), v.size() * sizeof(float)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  void bytes(void* p, std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw FormatError(FormatError::Kind::truncated, origin_ + ": file ends inside " + what + " (offset " +
                                                          std::to_string(pos_) + ", need " + std::to_string(n) +
                                                          " bytes, have " + std::to_string(in_.size() - pos_) + ")");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, 8, what);
    return v;
  }
  void f32(std::span<float> v, const char* what) { bytes(v.data(), v.size() * sizeof(float), what); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

FormatError::FormatError(Kind kind, const std::string& detail)
    : ValidationError(to_string(kind) + ": " + detail), kind_(kind) {}

std::string to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::bad_magic: return "bad magic";
    case FormatError::Kind::version_mismatch: return "version mismatch";
    case FormatError::Kind::truncated: return "truncated file";
    case FormatError::Kind::dim_mismatch: return "dim mismatch";
    case FormatError::Kind::bad_descriptor: return "bad descriptor";
    case FormatError::Kind::missing_file: return "missing file";
  }
  return "format error";
}

std::size_t Dataset::frame_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

bool same_content(const DemoSequence& a, const DemoSequence& b) {
  return a.id == b.id && a.source == b.source && a.seed == b.seed && a.scene.bowl_x == b.scene.bowl_x &&
         a.scene.color == b.scene.color && a.scene.fill == b.scene.fill && a.frames == b.frames;
}

// ------------------------------------------------------------ sequence files

std::vector<std::uint8_t> encode_sequence(const DemoSequence& seq) {
  if (seq.frames.empty()) throw ValidationError("sequence '" + seq.id + "' has no frames");
  const auto& shape = seq.frames.front().image.shape();
  if (shape.size() != 3) throw ValidationError("sequence '" + seq.id + "': images must be [C,H,W]");
  const std::size_t nj = seq.frames.front().joints.size();
  Writer w;
  w.bytes(kSeqMagic, 4);
  w.u32(kSequenceVersion);
  w.u32(static_cast<std::uint32_t>(seq.frames.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(nj));
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    if (f.image.shape() != shape || f.joints.size() != nj)
      throw ValidationError("sequence '" + seq.id + "': frame " + std::to_string(i) + " has image " +
                            nn::shape_string(f.image.shape()) + " / " + std::to_string(f.joints.size()) +
                            " joints, expected " + nn::shape_string(shape) + " / " + std::to_string(nj));
    w.f32(f.image.data());
    w.f32(f.joints);
    w.f32(f.force);
    w.f32(std::span<const float>(&f.material, 1));
  }
  return w.take();
}

std::vector<Frame> decode_sequence(std::span<const std::uint8_t> bytes, const std::string& origin,
                                   SequenceHeader* header) {
  Reader r(bytes, origin);
  char magic[4];
  r.bytes(magic, 4, "header");
  if (std::memcmp(magic, kSeqMagic, 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, origin + ": expected 'LFDS' sequence header");
  SequenceHeader h;
  h.version = r.u32("header");
  if (h.version != kSequenceVersion)
    throw FormatError(FormatError::Kind::version_mismatch, origin + ": sequence format version " +
                                                               std::to_string(h.version) + ", this build reads " +
                                                               std::to_string(kSequenceVersion));
  h.frames = r.u32("header");
  h.channels = r.u32("header");
  h.height = r.u32("header");
  h.width = r.u32("header");
  h.joints = r.u32("header");
  if (h.channels == 0 || h.height == 0 || h.width == 0)
    throw FormatError(FormatError::Kind::dim_mismatch, origin + ": zero image dimension in header");
  const std::size_t per_frame =
      (static_cast<std::size_t>(h.channels) * h.height * h.width + h.joints + 4) * sizeof(float);
  const std::size_t expected = per_frame * h.frames;
  if (r.remaining() < expected)
    throw FormatError(FormatError::Kind::truncated, origin + ": header announces " + std::to_string(h.frames) +
                                                        " frames (" + std::to_string(expected) + " bytes), file holds " +
                                                        std::to_string(r.remaining()));
  if (r.remaining() > expected)
    throw FormatError(FormatError::Kind::dim_mismatch,
                      origin + ": " + std::to_string(r.remaining() - expected) + " trailing bytes after the last frame");
  std::vector<Frame> frames(h.frames);
  for (auto& f : frames) {
    f.image = nn::Tensor<float>({h.channels, h.height, h.width}, 0.0f);
    r.f32(f.image.data(), "frame image");
    f.joints.resize(h.joints);
    r.f32(f.joints, "frame joints");
    r.f32(f.force, "frame force");
    r.f32(std::span<float>(&f.material, 1), "frame material");
  }
  if (header) *header = h;
  return frames;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::missing_file, path.string() + ": cannot open");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError(path.string() + ": write failed");
}

void write_sequence_file(const DemoSequence& seq, const fs::path& path) { write_file(path, encode_sequence(seq)); }

std::vector<Frame> read_sequence_file(const fs::path& path, SequenceHeader* header) {
  return decode_sequence(read_file(path), path.string(), header);
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ------------------------------------------------------------------ manifest

nlohmann::json scene_to_json(const sim::SceneConfig& s) {
  return {{"bowl_x", s.bowl_x},         {"color", sim::to_string(s.color)},
          {"fill", sim::to_string(s.fill)}, {"bowl_radius", s.bowl_radius},
          {"wall_thickness", s.wall_thickness}, {"base", {s.base_x, s.base_y}},
          {"links", s.links},           {"image_size", s.image_size},
          {"view", {s.view_x0, s.view_y0, s.view_extent}}};
}

sim::SceneConfig scene_from_json(const nlohmann::json& j) {
  sim::SceneConfig s;
  try {
    s.bowl_x = j.at("bowl_x").get<double>();
    s.color = sim::bowl_color_from_string(j.at("color").get<std::string>());
    s.fill = sim::fill_level_from_string(j.at("fill").get<std::string>());
    if (j.contains("bowl_radius")) s.bowl_radius = j["bowl_radius"].get<double>();
    if (j.contains("wall_thickness")) s.wall_thickness = j["wall_thickness"].get<double>();
    if (j.contains("base")) {
      s.base_x = j["base"].at(0).get<double>();
      s.base_y = j["base"].at(1).get<double>();
    }
    if (j.contains("links")) s.links = j["links"].get<std::vector<double>>();
    if (j.contains("image_size")) s.image_size = j["image_size"].get<std::size_t>();
    if (j.contains("view")) {
      s.view_x0 = j["view"].at(0).get<double>();
      s.view_y0 = j["view"].at(1).get<double>();
      s.view_extent = j["view"].at(2).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene: ") + e.what());
  }
  return s;
}

nlohmann::json save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["image"] = {dataset.channels, dataset.height, dataset.width};
  manifest["joints"] = dataset.joints;
  manifest["sequences"] = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.sequences.size(); ++i) {
    const auto& seq = dataset.sequences[i];
    for (const auto& f : seq.frames)
      if (f.image.shape() != nn::Shape{dataset.channels, dataset.height, dataset.width} ||
          f.joints.size() != dataset.joints)
        throw ValidationError("save_dataset: sequence '" + seq.id + "' does not match the dataset dims");
    std::ostringstream name;
    name << "seq_" << std::setw(4) << std::setfill('0') << i << ".lfds";
    write_sequence_file(seq, dir / name.str());
    manifest["sequences"].push_back({{"id", seq.id},
                                     {"filename", name.str()},
                                     {"length", seq.frames.size()},
                                     {"scene", scene_to_json(seq.scene)},
                                     {"source", seq.source},
                                     {"seed", seq.seed}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw ValidationError((dir / "manifest.json").string() + ": write failed");
  return manifest;
}

Dataset load_dataset(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError(FormatError::Kind::missing_file, mpath.string() + ": no manifest");
  nlohmann::json m;
  try {
    std::ifstream in(mpath);
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::bad_descriptor, mpath.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kManifestVersion)
      throw FormatError(FormatError::Kind::version_mismatch,
                        mpath.string() + ": manifest version " + std::to_string(version));
    const auto dims = m.at("image").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError(FormatError::Kind::bad_descriptor, mpath.string() + ": image dims need 3 entries");
    ds.channels = dims[0];
    ds.height = dims[1];
    ds.width = dims[2];
    ds.joints = m.at("joints").get<std::size_t>();
    for (const auto& e : m.at("sequences")) {
      DemoSequence seq;
      seq.id = e.at("id").get<std::string>();
      seq.scene = scene_from_json(e.at("scene"));
      seq.source = e.at("source").get<std::string>();
      seq.seed = e.at("seed").get<std::uint64_t>();
      const auto fpath = dir / e.at("filename").get<std::string>();
      SequenceHeader h;
      seq.frames = read_sequence_file(fpath, &h);
      if (h.channels != ds.channels || h.height != ds.height || h.width != ds.width || h.joints != ds.joints)
        throw FormatError(FormatError::Kind::dim_mismatch,
                          fpath.string() + ": header dims " + std::to_string(h.channels) + "x" + std::to_string(h.height) +
                              "x" + std::to_string(h.width) + " J=" + std::to_string(h.joints) +
                              " disagree with the manifest");
      if (h.frames != e.at("length").get<std::size_t>())
        throw FormatError(FormatError::Kind::dim_mismatch, fpath.string() + ": frame count " +
                                                               std::to_string(h.frames) + " disagrees with the manifest");
      ds.sequences.push_back(std::move(seq));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::bad_descriptor, mpath.string() + ": " + e.what());
  }
  return ds;
}

// --------------------------------------------------------------- model files

std::vector<std::uint8_t> encode_model(const ModelBundle& bundle) {
  nlohmann::json desc;
  desc["kind"] = bundle.kind;
  desc["architecture"] = bundle.architecture;
  desc["training"] = bundle.training;
  desc["blocks"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& b : bundle.blocks) {
    desc["blocks"].push_back({{"name", b.name}, {"shape", b.tensor.shape()}, {"offset", offset}, {"count", b.tensor.size()}});
    offset += b.tensor.size();
  }
  desc["blob_floats"] = offset;
  const std::string text = desc.dump(1);
  Writer w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  for (const auto& b : bundle.blocks) w.f32(b.tensor.data());
  return w.take();
}

ModelBundle decode_model(std::span<const std::uint8_t> bytes, const std::string& origin) {
  Reader r(bytes, origin);
  char magic[4];
  r.bytes(magic, 4, "header");
  if (std::memcmp(magic, kModelMagic, 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, origin + ": expected 'LFDM' model header");
  const auto version = r.u32("header");
  if (version != kModelVersion)
    throw FormatError(FormatError::Kind::version_mismatch,
                      origin + ": model format version " + std::to_string(version) + ", this build reads " +
                          std::to_string(kModelVersion));
  const auto len = r.u64("header");
  if (len > r.remaining())
    throw FormatError(FormatError::Kind::truncated, origin + ": descriptor length exceeds the file");
  std::string text(len, '\0');
  r.bytes(text.data(), len, "descriptor");
  ModelBundle m;
  std::vector<std::pair<std::string, nn::Shape>> layout;
  std::size_t total = 0;
  try {
    const auto desc = nlohmann::json::parse(text);
    m.kind = desc.at("kind").get<std::string>();
    m.architecture = desc.at("architecture");
    m.training = desc.at("training");
    for (const auto& b : desc.at("blocks")) {
      auto shape = b.at("shape").get<nn::Shape>();
      const auto offset = b.at("offset").get<std::size_t>();
      const auto count = b.at("count").get<std::size_t>();
      if (offset != total || shape.empty() || nn::shape_product(shape) != count)
        throw FormatError(FormatError::Kind::bad_descriptor,
                          origin + ": block '" + b.at("name").get<std::string>() + "' has inconsistent offset/shape/count");
      total += count;
      layout.emplace_back(b.at("name").get<std::string>(), std::move(shape));
    }
    if (desc.at("blob_floats").get<std::size_t>() != total)
      throw FormatError(FormatError::Kind::bad_descriptor, origin + ": blob size disagrees with the block table");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::bad_descriptor, origin + ": " + e.what());
  }
  if (r.remaining() < total * sizeof(float))
    throw FormatError(FormatError::Kind::truncated, origin + ": parameter blob holds " + std::to_string(r.remaining()) +
                                                        " bytes, descriptor needs " + std::to_string(total * sizeof(float)));
  if (r.remaining() > total * sizeof(float))
    throw FormatError(FormatError::Kind::dim_mismatch, origin + ": trailing bytes after the parameter blob");
  for (auto& [name, shape] : layout) {
    nn::Tensor<float> t(shape, 0.0f);
    r.f32(t.data(), "parameter blob");
    try {
      m.add_block(name, std::move(t));
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatError::Kind::bad_descriptor, origin + ": " + e.what());
    }
  }
  try {
    check_bundle(m);
  } catch (const ValidationError& e) {
    throw FormatError(FormatError::Kind::dim_mismatch, origin + ": " + e.what());
  }
  return m;
}

void save_model(const ModelBundle& bundle, const fs::path& path) {
  check_bundle(bundle);
  write_file(path, encode_model(bundle));
}

ModelBundle load_model(const fs::path& path) { return decode_model(read_file(path), path.string()); }

}  // namespace lfd::store
