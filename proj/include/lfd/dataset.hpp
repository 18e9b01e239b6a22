#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfd/errors.hpp"
#include "lfd/model_bundle.hpp"
#include "lfd/sim.hpp"
#include "lfd/tensor.hpp"

namespace lfd::store {

/// One sampled instant of a demonstration or rollout.
struct Frame {
  nn::Tensor<float> image;  // [C, H, W]
  std::vector<float> joints;
  std::array<float, 3> force{};  // fx, fy, torque from the wrist sensor
  float material = 0.0f;         // volume on the spoon

  bool operator==(const Frame&) const = default;
};

struct DemoSequence {
  std::string id;
  sim::SceneConfig scene;
  std::string source = "scripted";  // human | scripted | grid | rollout
  std::uint64_t seed = 0;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
};

struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t joints = 6;
  std::vector<DemoSequence> sequences;

  std::size_t frame_count() const;
};

bool same_content(const DemoSequence& a, const DemoSequence& b);

inline constexpr std::uint32_t kSequenceVersion = 1;
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr int kManifestVersion = 1;

/// Raised for malformed files. `what()` always starts with the diagnostic
/// name (e.g. "bad magic") followed by the path.
class FormatError : public ValidationError {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, dim_mismatch, bad_descriptor, missing_file };
  FormatError(Kind kind, const std::string& detail);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string to_string(FormatError::Kind kind);

struct SequenceHeader {
  std::uint32_t version = kSequenceVersion;
  std::uint32_t frames = 0;
  std::uint32_t channels = 0, height = 0, width = 0, joints = 0;
};

std::vector<std::uint8_t> encode_sequence(const DemoSequence& seq);
/// Decodes frames only; scene/id/source come from the manifest.
std::vector<Frame> decode_sequence(std::span<const std::uint8_t> bytes, const std::string& origin,
                                   SequenceHeader* header = nullptr);

void write_sequence_file(const DemoSequence& seq, const std::filesystem::path& path);
std::vector<Frame> read_sequence_file(const std::filesystem::path& path, SequenceHeader* header = nullptr);

nlohmann::json scene_to_json(const sim::SceneConfig& scene);
sim::SceneConfig scene_from_json(const nlohmann::json& j);

/// Writes one sequence file per entry plus manifest.json; returns the manifest.
nlohmann::json save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_model(const ModelBundle& bundle);
ModelBundle decode_model(std::span<const std::uint8_t> bytes, const std::string& origin);
void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
/// FNV-1a 64 over the bytes, as 16 hex digits.
std::string content_hash(std::span<const std::uint8_t> bytes);

}  // namespace lfd::store
