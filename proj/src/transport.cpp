// SPDX-License-Identifier: Apache-2.0
#include "opdlab/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

namespace opdlab::protocol {

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

// false on EOF before any byte was read
bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, buf + got, n - got);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("stream ended inside a frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      sys_fail("read");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const std::uint8_t* buf, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, buf, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      sys_fail("write");
    }
    buf += w;
    n -= static_cast<std::size_t>(w);
  }
}

}  // namespace

std::optional<Bytes> read_frame(int fd) {
  std::uint8_t hdr[4];
  if (!read_exact(fd, hdr, 4)) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{hdr[0]} << 24) | (std::uint32_t{hdr[1]} << 16) |
                          (std::uint32_t{hdr[2]} << 8) | std::uint32_t{hdr[3]};
  if (n > kMaxFrame) throw ProtocolError("frame length " + std::to_string(n) + " exceeds the 64 MiB limit");
  Bytes body(n);
  if (n > 0 && !read_exact(fd, body.data(), n)) throw TransportError("stream ended inside a frame");
  return body;
}

void write_frame(int fd, std::span<const std::uint8_t> body) {
  const Bytes f = frame(body);
  write_all(fd, f.data(), f.size());
}

std::size_t serve_stream(const TeacherService& service, int in_fd, int out_fd) {
  std::size_t n = 0;
  while (auto body = read_frame(in_fd)) {
    write_frame(out_fd, service.handle_body(*body));
    ++n;
  }
  return n;
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
    throw ArgumentError("endpoint must look like host:port, got '" + text + "'");
  Endpoint e;
  e.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  unsigned long v = 0;
  for (char c : port) {
    if (c < '0' || c > '9') throw ArgumentError("bad port in endpoint '" + text + "'");
    v = v * 10 + static_cast<unsigned long>(c - '0');
    if (v > 65535) throw ArgumentError("port out of range in endpoint '" + text + "'");
  }
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

namespace {

addrinfo* resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(e.port);
  const int rc = ::getaddrinfo(e.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve '" + e.host + "': " + ::gai_strerror(rc));
  return res;
}

void serve_connection(const TeacherService& service, int fd) {
  try {
    serve_stream(service, fd, fd);
  } catch (const std::exception&) {
    // a broken connection only ends that connection
  }
  ::close(fd);
}

}  // namespace

void serve_socket(const TeacherService& service, const Endpoint& endpoint, const SocketServerOptions& opts) {
  ::signal(SIGPIPE, SIG_IGN);
  addrinfo* ai = resolve(endpoint, true);
  const int lfd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
  if (lfd < 0) {
    ::freeaddrinfo(ai);
    sys_fail("socket");
  }
  int one = 1;
  ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(lfd, ai->ai_addr, ai->ai_addrlen) < 0) {
    ::freeaddrinfo(ai);
    ::close(lfd);
    sys_fail("bind " + endpoint.host + ":" + std::to_string(endpoint.port));
  }
  ::freeaddrinfo(ai);
  if (::listen(lfd, 16) < 0) {
    ::close(lfd);
    sys_fail("listen");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&bound), &len);
  if (opts.on_listening) opts.on_listening(ntohs(bound.sin_port));

  std::vector<std::thread> workers;
  std::size_t served = 0;
  while (opts.max_connections == 0 || served < opts.max_connections) {
    if (opts.stop && opts.stop->load()) break;
    if (opts.stop) {
      // wake up now and then so a raised stop flag is noticed without a new client
      pollfd pfd{lfd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      if (ready == 0 || (ready < 0 && errno == EINTR)) continue;
      if (ready < 0) break;
    }
    const int cfd = ::accept(lfd, nullptr, nullptr);
    if (cfd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    workers.emplace_back(serve_connection, std::cref(service), cfd);
    ++served;
  }
  for (auto& w : workers) w.join();
  ::close(lfd);
}

Client Client::connect(const Endpoint& endpoint) {
  addrinfo* ai = resolve(endpoint, false);
  const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(ai);
    sys_fail("socket");
  }
  if (::connect(fd, ai->ai_addr, ai->ai_addrlen) < 0) {
    ::freeaddrinfo(ai);
    ::close(fd);
    sys_fail("connect " + endpoint.host + ":" + std::to_string(endpoint.port));
  }
  ::freeaddrinfo(ai);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  const int out = ::dup(fd);
  if (out < 0) {
    ::close(fd);
    sys_fail("dup");
  }
  return Client(fd, out, -1);
}

Client Client::spawn(const std::string& command) {
  ::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe(to_child) < 0) sys_fail("pipe");
  if (::pipe(from_child) < 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    sys_fail("pipe");
  }
  const pid_t pid = ::fork();
  if (pid < 0) sys_fail("fork");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return Client(from_child[0], to_child[1], pid);
}

Client::Client(Client&& o) noexcept : in_(o.in_), out_(o.out_), child_(o.child_) {
  o.in_ = o.out_ = o.child_ = -1;
}

Client::~Client() {
  if (out_ >= 0) ::close(out_);
  if (in_ >= 0) ::close(in_);
  if (child_ > 0) {
    int status = 0;
    ::waitpid(child_, &status, 0);
  }
}

Bytes Client::round_trip(std::span<const std::uint8_t> body) {
  write_frame(out_, body);
  auto reply = read_frame(in_);
  if (!reply) throw TransportError("server closed the stream without replying");
  return *reply;
}

Message Client::query(const ScoreRequest& req) {
  return decode(round_trip(encode(req)));
}

}  // namespace opdlab::protocol
