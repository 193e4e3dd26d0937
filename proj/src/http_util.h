// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the HTTP servers. Internal.

#pragma once

#include <string>

#include <fmt/format.h>
#include <httplib.h>

#include "hetserve/errors.h"
#include "json_util.h"

namespace hetserve::detail {

/// Thread pool size for the HTTP servers; every in-flight request holds a
/// worker while it waits for its backend.
inline constexpr std::size_t kHttpWorkers = 256;

inline void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// Binds `server`; port 0 picks a free port and stores it in `port`.
inline void bind_server(httplib::Server& server, const std::string& host, int& port) {
  if (port == 0) {
    port = server.bind_to_any_port(host);
    if (port < 0) throw IoError(fmt::format("cannot bind {}", host));
  } else if (!server.bind_to_port(host, port)) {
    throw IoError(fmt::format("cannot bind {}:{}", host, port));
  }
}

}  // namespace hetserve::detail
