// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "opdlab/protocol.hpp"

namespace opdlab::protocol {

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reads one frame body; nullopt on clean end-of-stream before a length prefix.
std::optional<Bytes> read_frame(int fd);
void write_frame(int fd, std::span<const std::uint8_t> body);

/// Answers frames from `in_fd` on `out_fd` until end-of-stream. Returns the request count.
std::size_t serve_stream(const TeacherService& service, int in_fd, int out_fd);

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
/// "host:port"; port 0 asks the OS for a free port when serving.
Endpoint parse_endpoint(const std::string& text);

struct SocketServerOptions {
  std::size_t max_connections = 0;  // 0: serve until `stop` is set
  const std::atomic<bool>* stop = nullptr;
  std::function<void(std::uint16_t)> on_listening;  // receives the bound port
};

/// TCP server; every connection gets its own thread over the shared immutable service.
void serve_socket(const TeacherService& service, const Endpoint& endpoint, const SocketServerOptions& opts = {});

/// Synchronous client over a socket or a spawned pipe process.
class Client {
 public:
  static Client connect(const Endpoint& endpoint);
  /// Runs `command` through /bin/sh with its stdin/stdout wired to this client.
  static Client spawn(const std::string& command);

  Client(Client&& other) noexcept;
  Client& operator=(Client&&) = delete;
  Client(const Client&) = delete;
  ~Client();

  Message query(const ScoreRequest& req);
  Bytes round_trip(std::span<const std::uint8_t> body);

 private:
  Client(int in_fd, int out_fd, int child) : in_(in_fd), out_(out_fd), child_(child) {}
  int in_ = -1;   // we read responses here
  int out_ = -1;  // we write requests here
  int child_ = -1;
};

}  // namespace opdlab::protocol
