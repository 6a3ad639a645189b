#include "mimil/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <exception>
#include <istream>
#include <ostream>

#include "mimil/common.hpp"

namespace mimil::stream {

namespace {

using Clock = std::chrono::steady_clock;

io::Json error_record(const std::string& window_id, const std::string& what) {
  return {{"window_id", window_id}, {"error", what}};
}

}  // namespace

io::Json process_line(const models::Classifier& model, const std::string& line, bool* ok) {
  if (ok) *ok = false;
  const auto t0 = Clock::now();
  io::Json in;
  try {
    in = io::Json::parse(line);
  } catch (const io::Json::parse_error& e) {
    return error_record("", std::string("malformed json: ") + e.what());
  }
  std::string wid;
  try {
    if (!in.is_object()) return error_record("", "input line is not an object");
    wid = in.value("window_id", std::string());
    const auto mode = features::parse_feature_mode(in.at("feature_mode").get<std::string>());
    if (mode != model.spec().mode) {
      return error_record(wid, "feature_mode '" + std::string(features::to_string(mode)) +
                                   "' does not match the model's '" +
                                   std::string(features::to_string(model.spec().mode)) + "'");
    }
    const io::Json& m = in.at("matrix");
    if (!m.is_array() || m.size() != static_cast<std::size_t>(features::kNumSegments)) {
      return error_record(wid, "matrix must have " + std::to_string(features::kNumSegments) + " rows");
    }
    const int d = features::num_columns(mode);
    Matrix x(features::kNumSegments, d);
    for (int r = 0; r < features::kNumSegments; ++r) {
      const io::Json& row = m[r];
      if (!row.is_array() || row.size() != static_cast<std::size_t>(d)) {
        return error_record(wid, "row " + std::to_string(r) + " must have " + std::to_string(d) + " values");
      }
      for (int c = 0; c < d; ++c) x(r, c) = row[c].get<double>();
    }
    if (!x.allFinite()) return error_record(wid, "non-finite feature value");
    const models::Inference inf = model.infer(x);
    const double latency = std::chrono::duration<double>(Clock::now() - t0).count();
    io::Json out = {{"window_id", wid},
                    {"probability", inf.probability},
                    {"predicted_class", inf.probability >= 0.5 ? "CWS" : "CWNS"},
                    {"attention", inf.attention},
                    {"latency_s", latency}};
    if (ok) *ok = true;
    return out;
  } catch (const io::Json::exception& e) {
    return error_record(wid, e.what());
  } catch (const std::exception& e) {
    return error_record(wid, e.what());
  }
}

StreamStats infer_stream(const models::Classifier& model, std::istream& in, std::ostream& out) {
  StreamStats stats;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    bool ok = false;
    const io::Json rec = process_line(model, line, &ok);
    ++stats.lines;
    if (ok) {
      stats.total_latency_s += rec["latency_s"].get<double>();
    } else {
      ++stats.errors;
    }
    out << rec.dump() << '\n';
    out.flush();
  }
  return stats;
}

namespace {

void write_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t n = ::send(fd, s.data() + off, s.size() - off, MSG_NOSIGNAL);
    if (n <= 0) throw IoError("stream client disconnected");
    off += static_cast<std::size_t>(n);
  }
}

void serve_client(const models::Classifier& model, int fd) {
  std::string buf;
  char chunk[4096];
  for (;;) {
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n <= 0) break;
    buf.append(chunk, static_cast<std::size_t>(n));
    std::size_t pos;
    while ((pos = buf.find('\n')) != std::string::npos) {
      std::string line = buf.substr(0, pos);
      buf.erase(0, pos + 1);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      write_all(fd, process_line(model, line).dump() + "\n");
    }
  }
  if (buf.find_first_not_of(" \t\r") != std::string::npos) write_all(fd, process_line(model, buf).dump() + "\n");
}

}  // namespace

void serve_tcp(const models::Classifier& model, const std::string& address, int max_clients) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ParameterError("--stream-tcp expects host:port, got '" + address + "'");
  std::string host = address.substr(0, colon);
  const std::string port = address.substr(colon + 1);
  if (host.empty()) host = "0.0.0.0";

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
    throw IoError("cannot resolve " + address);
  }
  const int srv = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  int yes = 1;
  ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  const bool bound = srv >= 0 && ::bind(srv, res->ai_addr, res->ai_addrlen) == 0 && ::listen(srv, 4) == 0;
  ::freeaddrinfo(res);
  if (!bound) {
    if (srv >= 0) ::close(srv);
    throw IoError("cannot listen on " + address);
  }
  for (int served = 0; max_clients == 0 || served < max_clients; ++served) {
    const int fd = ::accept(srv, nullptr, nullptr);
    if (fd < 0) continue;
    try {
      serve_client(model, fd);
    } catch (const IoError&) {
    }
    ::close(fd);
  }
  ::close(srv);
}

}  // namespace mimil::stream
