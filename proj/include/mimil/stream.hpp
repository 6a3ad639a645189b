#pragma once

#include <iosfwd>
#include <string>

#include "mimil/io.hpp"
#include "mimil/models.hpp"

namespace mimil::stream {

struct StreamStats {
  long lines = 0;
  long errors = 0;
  double total_latency_s = 0.0;
  double mean_latency_s() const { return lines > errors ? total_latency_s / double(lines - errors) : 0.0; }
};

// One input line {window_id, feature_mode, matrix} -> one output record.
// Malformed input yields {"window_id", "error"}; latency covers parsing,
// z-scoring and the forward pass.
io::Json process_line(const models::Classifier& model, const std::string& line, bool* ok = nullptr);

// Reads line-delimited JSON until EOF, writing and flushing one record per
// non-blank input line in order.
StreamStats infer_stream(const models::Classifier& model, std::istream& in, std::ostream& out);

// Accepts connections on "host:port" (or ":port") and serves the same line
// protocol, one client at a time. Returns after `max_clients` clients
// (0 = forever). Throws IoError when the socket cannot be bound.
void serve_tcp(const models::Classifier& model, const std::string& address, int max_clients = 0);

}  // namespace mimil::stream
