// SPDX-License-Identifier: Apache-2.0
//
// WebSocket host for a LiveSession: one tick thread, one I/O thread, any
// number of clients. Clients receive a hello, then decimated state messages;
// their obstacle/target/control messages go through the session mailbox.
#pragma once

#include <atomic>
#include <memory>
#include <ostream>
#include <string>

#include "shapectl/live.hpp"

namespace shapectl {

struct ServeOptions {
  std::string address = "127.0.0.1";
  int port = 8731;       // 0 picks a free port
  long max_ticks = 0;    // 0 runs until stop()
  std::ostream* record = nullptr;
  std::ostream* log = nullptr;  // overrun and connection diagnostics
};

class LiveServer {
 public:
  LiveServer(LiveSession& session, ServeOptions options);
  ~LiveServer();
  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  /// Bound port (known right after construction).
  int port() const;
  /// Blocks running the tick loop until stop() or max_ticks.
  void run();
  /// Thread-safe.
  void stop();

  long ticks() const;
  long overruns() const;
  int clients() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace shapectl
