#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "locagg/types.hpp"

namespace locagg {

enum class MsgType : std::uint8_t {
  hello = 0,
  assign = 1,
  beta_report = 2,
  z_broadcast = 3,
  stop = 4,
  result = 5,
};

constexpr std::uint16_t kProtocolVersion = 1;
constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 8;  // magic, msg_type, payload_len

/// Little-endian payload writer.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_raw(&v, sizeof v); }
  void put_u64(std::uint64_t v) { put_raw(&v, sizeof v); }
  void put_f64(double v) { put_raw(&v, sizeof v); }
  void put_f64_array(const double* data, std::size_t count) { put_raw(data, count * sizeof(double)); }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  void put_raw(const void* data, std::size_t size) {
    auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + size);
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint8_t get_u8() { return get<std::uint8_t>(); }
  std::uint16_t get_u16() { return get<std::uint16_t>(); }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  double get_f64() { return get<double>(); }
  void get_f64_array(double* out, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(out, buf_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t size) const {
    if (pos_ + size > buf_.size()) throw NetworkError("wire payload shorter than declared");
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

/// Connected stream socket with per-direction byte counters.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept { *this = std::move(other); }
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close_fd();
      fd_ = other.fd_;
      bytes_sent_ = other.bytes_sent_;
      bytes_received_ = other.bytes_received_;
      other.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close_fd(); }

  bool valid() const { return fd_ >= 0; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }

  static Socket connect_to(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* results = nullptr;
    if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &results) != 0)
      throw NetworkError("cannot resolve " + host);
    Socket sock;
    for (addrinfo* ai = results; ai; ai = ai->ai_next) {
      int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        sock = Socket(fd);
        break;
      }
      ::close(fd);
    }
    freeaddrinfo(results);
    if (!sock.valid()) throw NetworkError("cannot connect to " + host + ":" + std::to_string(port));
    return sock;
  }

  void send_all(const void* data, std::size_t size) {
    const char* p = static_cast<const char*>(data);
    while (size > 0) {
      ssize_t sent = ::send(fd_, p, size, MSG_NOSIGNAL);
      if (sent <= 0) throw NetworkError("connection lost while sending");
      p += sent;
      size -= static_cast<std::size_t>(sent);
      bytes_sent_ += static_cast<std::uint64_t>(sent);
    }
  }

  void recv_all(void* data, std::size_t size) {
    char* p = static_cast<char*>(data);
    while (size > 0) {
      ssize_t got = ::recv(fd_, p, size, 0);
      if (got == 0) throw NetworkError("connection closed by peer");
      if (got < 0) throw NetworkError("receive failed or timed out");
      p += got;
      size -= static_cast<std::size_t>(got);
      bytes_received_ += static_cast<std::uint64_t>(got);
    }
  }

  void set_receive_timeout(int seconds) {
    timeval tv{};
    tv.tv_sec = seconds;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }

 private:
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
};

/// Listening socket bound to port (0 picks a free port).
class Listener {
 public:
  explicit Listener(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw NetworkError("cannot create listening socket");
    int enable = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &enable, sizeof enable);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
      ::close(fd_);
      throw NetworkError("cannot bind/listen on port " + std::to_string(port));
    }
  }
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener() {
    if (fd_ >= 0) ::close(fd_);
  }

  int port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  Socket accept_one() {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw NetworkError("accept failed");
    return Socket(fd);
  }

 private:
  int fd_ = -1;
};

struct Frame {
  MsgType type;
  std::vector<std::uint8_t> payload;
};

// Frame: magic "LAGW", msg_type u8, payload_len u64, payload bytes.
inline void send_frame(Socket& sock, MsgType type, const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> header(kFrameHeaderBytes);
  std::memcpy(header.data(), "LAGW", 4);
  header[4] = static_cast<std::uint8_t>(type);
  auto len = static_cast<std::uint64_t>(payload.size());
  std::memcpy(header.data() + 5, &len, 8);
  sock.send_all(header.data(), header.size());
  if (!payload.empty()) sock.send_all(payload.data(), payload.size());
}

inline Frame recv_frame(Socket& sock, std::uint64_t max_payload = 1ULL << 34) {
  std::uint8_t header[kFrameHeaderBytes];
  sock.recv_all(header, sizeof header);
  if (std::memcmp(header, "LAGW", 4) != 0) throw NetworkError("bad frame magic");
  std::uint8_t type = header[4];
  if (type > static_cast<std::uint8_t>(MsgType::result))
    throw NetworkError("unknown message type " + std::to_string(type));
  std::uint64_t len;
  std::memcpy(&len, header + 5, 8);
  if (len > max_payload) throw NetworkError("frame payload length out of range");
  Frame frame;
  frame.type = static_cast<MsgType>(type);
  frame.payload.resize(len);
  if (len > 0) sock.recv_all(frame.payload.data(), len);
  return frame;
}

inline Frame expect_frame(Socket& sock, MsgType expected) {
  Frame frame = recv_frame(sock);
  if (frame.type != expected)
    throw NetworkError("protocol violation: expected message type " +
                       std::to_string(static_cast<int>(expected)) + ", got " +
                       std::to_string(static_cast<int>(frame.type)));
  return frame;
}

}  // namespace locagg
