#include "lfd/bridge.hpp"

#include <chrono>
#include <cmath>
#include <deque>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/websocket.hpp>

#include "lfd/demo.hpp"
#include "lfd/errors.hpp"

namespace lfd::bridge {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json error_reply(const std::string& field, const std::string& message) {
  return {{"type", "error"}, {"field", field}, {"message", message}};
}

// Returns the named finite number, or records which field was wrong.
std::optional<double> number_field(const json& msg, const char* name) {
  if (!msg.contains(name) || !msg[name].is_number()) return std::nullopt;
  const double v = msg[name].get<double>();
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

json pose_json(const sim::Pose2D& p) { return {{"x", p.x}, {"y", p.y}, {"theta", p.theta}}; }

}  // namespace

std::string encode_frame(const nn::Tensor<float>& image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw ValidationError("encode_frame: expected a [3, H, W] image");
  const std::size_t h = s[1], w = s[2], plane = h * w;
  std::string rgb(3 * plane, '\0');
  const auto& d = image.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(d[c * plane + p], 0.0f, 1.0f);
      rgb[3 * p + c] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(rgb.size()), '\0');
  out.resize(b64::encode(out.data(), rgb.data(), rgb.size()));
  return out;
}

BridgeSession::BridgeSession(sim::SceneConfig scene, BridgeOptions options) : options_(std::move(options)) {
  if (options_.frame_period == 0) throw ValidationError("bridge: frame_period must be positive");
  if (!(options_.tick_hz > 0.0)) throw ValidationError("bridge: tick_hz must be positive");
  options_.gains.validate();
  restart(scene);
}

void BridgeSession::restart(const sim::SceneConfig& scene) {
  scene.validate();
  session_ = std::make_unique<bilateral::Session>(scene, options_.gains, options_.hand, 1.0 / options_.tick_hz);
  target_.reset();
  recording_ = false;
  recorded_ = {};
}

std::optional<json> BridgeSession::handle_text(const std::string& text) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::parse_error& e) {
    return error_reply("message", std::string("not valid json: ") + e.what());
  }
  return handle(msg);
}

std::optional<json> BridgeSession::handle(const json& msg) {
  if (!msg.is_object()) return error_reply("message", "expected a json object");
  if (!msg.contains("type") || !msg["type"].is_string()) return error_reply("type", "missing or non-string field 'type'");
  const auto type = msg["type"].get<std::string>();
  if (type == "drag") return on_drag(msg);
  if (type == "record") return on_record(msg);
  if (type == "reset") return on_reset(msg);
  if (type == "info") return info_message();
  return error_reply("type", "unknown message type '" + type + "'");
}

json BridgeSession::on_drag(const json& msg) {
  sim::Pose2D p;
  for (const char* name : {"x", "y", "theta"}) {
    const auto v = number_field(msg, name);
    if (!v) return error_reply(name, std::string("drag: missing or non-numeric field '") + name + "'");
    if (name[0] == 'x') p.x = *v;
    else if (name[0] == 'y') p.y = *v;
    else p.theta = *v;
  }
  target_ = p;
  return {{"type", "ack"}, {"of", "drag"}, {"target", pose_json(p)}};
}

fs::path BridgeSession::next_recording_path() const {
  for (std::size_t k = saved_count_;; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "human_%04zu", k);
    const auto p = options_.record_dir / name;
    if (!fs::exists(p)) return p;
  }
}

json BridgeSession::on_record(const json& msg) {
  if (!msg.contains("action") || !msg["action"].is_string())
    return error_reply("action", "record: missing field 'action' (start or stop)");
  const auto action = msg["action"].get<std::string>();
  if (action == "start") {
    if (msg.contains("scene")) {
      try {
        restart(store::scene_from_json(msg["scene"]));
      } catch (const ValidationError& e) {
        return error_reply("scene", e.what());
      }
    }
    recording_ = true;
    record_start_ = session_->ticks();
    recorded_ = {};
    recorded_.scene = session_->scene();
    recorded_.source = "human";
    if (msg.contains("id") && msg["id"].is_string()) recorded_.id = msg["id"].get<std::string>();
    return {{"type", "ack"}, {"of", "record"}, {"action", "start"}};
  }
  if (action == "stop") {
    if (!recording_) return {{"type", "warning"}, {"message", "record stop: not recording"}};
    recording_ = false;
    if (recorded_.frames.empty())
      return {{"type", "warning"}, {"message", "record stop: no frames captured, nothing written"}};
    const auto path = next_recording_path();
    if (recorded_.id.empty()) recorded_.id = path.filename().string();
    store::Dataset ds;
    ds.sequences.push_back(std::move(recorded_));
    recorded_ = {};
    try {
      store::save_dataset(ds, path);
    } catch (const std::exception& e) {
      return error_reply("record", std::string("could not save recording: ") + e.what());
    }
    ++saved_count_;
    return {{"type", "ack"},
            {"of", "record"},
            {"action", "stop"},
            {"path", path.string()},
            {"frames", ds.sequences[0].frames.size()}};
  }
  return error_reply("action", "record: action must be 'start' or 'stop', got '" + action + "'");
}

json BridgeSession::on_reset(const json& msg) {
  if (!msg.contains("scene")) return error_reply("scene", "reset: missing field 'scene'");
  try {
    const bool was_recording = recording_;
    restart(store::scene_from_json(msg["scene"]));
    json ack{{"type", "ack"}, {"of", "reset"}, {"scene", store::scene_to_json(session_->scene())}};
    if (was_recording) ack["discarded_recording"] = true;
    return ack;
  } catch (const ValidationError& e) {
    return error_reply("scene", e.what());
  }
}

json BridgeSession::tick() {
  if (recording_ && (session_->ticks() - record_start_) % options_.frame_period == 0)
    recorded_.frames.push_back(demo::capture_frame(session_->sim_state(), session_->scene()));
  if (target_) session_->tick_toward(*target_);
  else session_->tick({0.0, 0.0, 0.0});
  return state_message();
}

json BridgeSession::state_message() const {
  const auto& st = session_->sim_state();
  const auto& scene = session_->scene();
  const auto image = sim::render(st, scene);
  return {{"type", "state"},
          {"tick", session_->ticks()},
          {"frame",
           {{"width", image.shape()[2]}, {"height", image.shape()[1]}, {"encoding", "rgb8"}, {"data", encode_frame(image)}}},
          {"joints", st.joints},
          {"F_e", session_->state().environment_force},
          {"material", {{"bowl", st.material_in_bowl()}, {"spoon", st.material_on_spoon()}, {"removed", st.material_removed()}}},
          {"master", pose_json(session_->state().master)},
          {"slave", pose_json(session_->state().slave)},
          {"target", target_ ? pose_json(*target_) : json(nullptr)},
          {"recording", recording_},
          {"recorded_frames", recorded_.frames.size()}};
}

json BridgeSession::info_message() const {
  return {{"type", "info"},
          {"tick_hz", options_.tick_hz},
          {"tick", session_->ticks()},
          {"scene", store::scene_to_json(session_->scene())},
          {"recording", recording_},
          {"frame_period", options_.frame_period}};
}

// ---- socket server ----

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

constexpr std::size_t kMaxQueued = 32;

struct Client : std::enable_shared_from_this<Client> {
  explicit Client(tcp::socket socket) : ws(std::move(socket)) {}

  websocket::stream<beast::tcp_stream> ws;
  beast::flat_buffer buffer;
  std::deque<std::string> queue;
  bool writing = false;
  bool open = false;
  bool close_after_flush = false;

  // State messages are dropped rather than queued without bound when the
  // client reads too slowly; replies are always kept.
  void send(std::string text, bool droppable) {
    if (droppable && queue.size() >= kMaxQueued) return;
    queue.push_back(std::move(text));
    if (!writing) write_next();
  }

  void write_next() {
    if (queue.empty()) {
      writing = false;
      if (close_after_flush) {
        open = false;
        ws.async_close(websocket::close_code::try_again_later, [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    writing = true;
    ws.text(true);
    ws.async_write(net::buffer(queue.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open = false;
        self->queue.clear();
        self->writing = false;
        return;
      }
      self->queue.pop_front();
      self->write_next();
    });
  }
};

}  // namespace

struct Server::Impl {
  Impl(sim::SceneConfig scene, std::uint16_t port, BridgeOptions options)
      : acceptor(ioc), timer(ioc), session(std::move(scene), std::move(options)) {
    const tcp::endpoint ep(net::ip::make_address("0.0.0.0"), port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
    period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / session.options().tick_hz));
  }

  net::io_context ioc{1};
  tcp::acceptor acceptor;
  net::steady_timer timer;
  BridgeSession session;
  std::shared_ptr<Client> client;
  std::chrono::steady_clock::duration period{};
  std::chrono::steady_clock::time_point next_tick;

  bool has_client() const { return client && client->open; }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto c = std::make_shared<Client>(std::move(socket));
      c->ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      c->ws.async_accept([this, c](beast::error_code hec) {
        if (hec) return;
        c->open = true;
        if (has_client()) {
          c->close_after_flush = true;
          c->send(error_reply("connection", "busy: another client is already connected").dump(), false);
          return;
        }
        client = c;
        c->send(session.info_message().dump(), false);
        read(c);
      });
      accept();
    });
  }

  void read(const std::shared_ptr<Client>& c) {
    c->ws.async_read(c->buffer, [this, c](beast::error_code ec, std::size_t) {
      if (ec) {
        c->open = false;
        if (client == c) client.reset();
        return;
      }
      const auto text = beast::buffers_to_string(c->buffer.data());
      c->buffer.consume(c->buffer.size());
      if (auto reply = session.handle_text(text)) c->send(reply->dump(), false);
      read(c);
    });
  }

  void schedule() {
    timer.expires_at(next_tick);
    timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      const auto state = session.tick();
      if (has_client()) client->send(state.dump(), true);
      next_tick += period;
      // after a long stall, resume the cadence instead of bursting
      const auto now = std::chrono::steady_clock::now();
      if (next_tick + period < now) next_tick = now;
      schedule();
    });
  }
};

Server::Server(sim::SceneConfig scene, std::uint16_t port, BridgeOptions options)
    : impl_(std::make_shared<Impl>(std::move(scene), port, std::move(options))) {}

Server::~Server() {
  stop();
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() {
  impl_->next_tick = std::chrono::steady_clock::now() + impl_->period;
  impl_->accept();
  impl_->schedule();
  impl_->ioc.run();
}

void Server::stop() { impl_->ioc.stop(); }

}  // namespace lfd::bridge
