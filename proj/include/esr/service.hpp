#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "esr/pipeline.hpp"

namespace esr {

struct ServiceOptions {
  std::filesystem::path kb_dir;
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks a free port
  PipelineConfig pipeline;
  /// Spectrogram columns queued per subscriber before new ones are dropped.
  std::size_t column_backlog = 64;
};

/// Wire encodings shared by the HTTP payloads and the event stream.
nlohmann::json to_json(const RecognitionResult& r);
/// {"kind": ..., "payload": ...} without the per-connection sequence number.
nlohmann::json to_json(const PipelineEvent& ev);

/// Fans pipeline events out to stream subscribers. Past `backlog` queued
/// spectrogram columns a subscriber loses new columns and gets one
/// delay_warning per episode; other events are never dropped.
class EventHub {
 public:
  struct Subscriber;
  struct Batch {
    std::vector<nlohmann::json> events;  // {"seq", "kind", "payload"}
    bool closed = false;
  };

  explicit EventHub(std::size_t backlog);

  void publish(const PipelineEvent& ev);
  std::shared_ptr<Subscriber> subscribe();
  void unsubscribe(const std::shared_ptr<Subscriber>& sub);
  void close_all();
  std::size_t count() const;
  /// Waits up to `timeout` for events and numbers them for this subscriber.
  Batch next(Subscriber& sub, std::chrono::milliseconds timeout, std::size_t max = 64);

 private:
  std::size_t backlog_;
  mutable std::mutex m_;
  std::vector<std::shared_ptr<Subscriber>> subs_;
  bool closed_ = false;
};

struct EventHub::Subscriber {
  std::mutex m;
  std::condition_variable cv;
  std::deque<nlohmann::json> queue;
  std::size_t columns = 0;
  std::size_t dropped = 0;
  bool dropping = false;
  bool closed = false;
  std::uint64_t next_seq = 1;
};

/// Local HTTP service: REST endpoints under /api plus a server-sent event stream.
class Service {
 public:
  explicit Service(ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket and returns the port. DomainError if it is taken.
  int bind();
  /// Serves on a background thread (binding first if needed).
  void start();
  /// Stops sessions and the listener; idempotent.
  void stop();
  int port() const noexcept;

  Engine& engine();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace esr
