#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "lfd/bilateral.hpp"
#include "lfd/dataset.hpp"
#include "lfd/sim.hpp"

namespace lfd::bridge {

struct BridgeOptions {
  double tick_hz = 20.0;
  std::size_t frame_period = 2;  // ticks between recorded frames
  std::filesystem::path record_dir = "recordings";
  bilateral::Gains gains;
  bilateral::HandGains hand;
};

/// Raw 8-bit RGB, row-major HWC, base64.
std::string encode_frame(const nn::Tensor<float>& image);

/// One live session: a bilateral pair, the dragged target, and an optional
/// recording. Socket-free so it can be driven directly.
class BridgeSession {
 public:
  explicit BridgeSession(sim::SceneConfig scene, BridgeOptions options = {});

  /// Applies one client message between ticks; returns the reply, if any.
  /// Malformed input yields {"type": "error", "field": ..., "message": ...}.
  std::optional<nlohmann::json> handle(const nlohmann::json& msg);
  std::optional<nlohmann::json> handle_text(const std::string& text);

  /// Advances one tick and returns the state message for it.
  nlohmann::json tick();
  nlohmann::json state_message() const;
  nlohmann::json info_message() const;

  const bilateral::Session& session() const { return *session_; }
  std::optional<sim::Pose2D> target() const { return target_; }
  bool recording() const { return recording_; }
  std::size_t recorded_frames() const { return recorded_.frames.size(); }
  const BridgeOptions& options() const { return options_; }

 private:
  nlohmann::json on_drag(const nlohmann::json& msg);
  nlohmann::json on_record(const nlohmann::json& msg);
  nlohmann::json on_reset(const nlohmann::json& msg);
  void restart(const sim::SceneConfig& scene);
  std::filesystem::path next_recording_path() const;

  BridgeOptions options_;
  std::unique_ptr<bilateral::Session> session_;
  std::optional<sim::Pose2D> target_;
  bool recording_ = false;
  std::uint64_t record_start_ = 0;
  store::DemoSequence recorded_;
  std::size_t saved_count_ = 0;
};

/// WebSocket server for a single client. Ticks and socket I/O share one
/// event loop, so messages are applied strictly between ticks.
class Server {
 public:
  /// port 0 picks a free port; see port().
  Server(sim::SceneConfig scene, std::uint16_t port, BridgeOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const;
  /// Blocks until stop() is called.
  void run();
  /// Safe to call from any thread.
  void stop();

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace lfd::bridge
