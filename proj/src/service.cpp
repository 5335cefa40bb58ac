#include "esr/service.hpp"

#include <sys/socket.h>

#include <atomic>
#include <cmath>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "esr/errors.hpp"

namespace esr {

using nlohmann::json;

namespace {

json thresholds_json(const LevelThresholds& t) { return json(t.bounds); }

json class_json(const KnowledgeBase& kb, const SoundClass& c) {
  json ids = json::array();
  for (const auto& r : kb.records()) {
    if (r.class_name == c.name) ids.push_back(r.id);
  }
  return {{"name", c.name},
          {"importance", to_string(c.importance)},
          {"excluded", c.excluded},
          {"record_count", ids.size()},
          {"records", ids}};
}

json record_json(const SoundRecord& r, bool with_features) {
  json j = {{"id", r.id},
            {"class", r.class_name},
            {"environment", r.environment ? json(*r.environment) : json(nullptr)},
            {"created_at_ms", r.created_at_ms},
            {"has_audio", r.audio_path.has_value() || r.pending_audio != nullptr}};
  if (with_features) {
    j["features"] = std::vector<double>(r.features.data(), r.features.data() + kFeatureCount);
  }
  return j;
}

json opt_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> opt_field(const json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  return body.at(key).get<std::string>();
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body);
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  return body;
}

void reply(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// Only file replay is wired up; there is no microphone backend.
std::unique_ptr<AudioSource> open_source(const json& body) {
  if (!body.contains("source") || body["source"] == "live") {
    throw DomainError("live audio input is not available; pass {\"source\": {\"wav\": path}}");
  }
  const json& src = body.at("source");
  if (!src.is_object() || !src.contains("wav")) {
    throw ValidationError("source must be \"live\" or {\"wav\": path}");
  }
  const bool realtime = src.value("realtime", false);
  return std::make_unique<FileReplaySource>(read_wav_file(src.at("wav").get<std::string>()),
                                            kFrameSize, realtime);
}

struct ErrorInfo {
  int status;
  const char* code;
};

ErrorInfo classify_error(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const json::exception&) {
    return {400, "bad_request"};
  } catch (const ValidationError&) {
    return {400, "validation"};
  } catch (const ArgumentError&) {
    return {400, "validation"};
  } catch (const NotFoundError&) {
    return {404, "not_found"};
  } catch (const SessionBusyError&) {
    return {409, "session_busy"};
  } catch (const ConflictError&) {
    return {409, "conflict"};
  } catch (const FormatError&) {
    return {422, "unsupported_format"};
  } catch (const CannotRecognizeError&) {
    return {422, "cannot_recognize"};
  } catch (const TrainingError&) {
    return {422, "cannot_recognize"};
  } catch (const DomainError&) {
    return {422, "unavailable"};
  } catch (...) {
    return {500, "internal"};
  }
}

std::string error_message(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

}  // namespace

json to_json(const RecognitionResult& r) {
  return {{"sequence", r.sequence},
          {"stream_time_s", r.stream_time_s},
          {"duration_s", r.duration_s},
          {"wall_time_ms", r.wall_time_ms},
          {"class", r.class_name},
          {"posterior", r.posterior},
          {"g", r.gpi.g},
          {"level", r.level},
          {"importance", to_string(r.importance)},
          {"display", to_string(r.display)},
          {"model_revision", r.model_revision},
          {"latency_ms", r.latency_ms},
          {"gpi",
           {{"g", r.gpi.g},
            {"level", r.gpi.level},
            {"class", r.gpi.class_name},
            {"centroid_distance", r.gpi.centroid_distance},
            {"nearest_distance", r.gpi.nearest_distance},
            {"nearest_index", r.gpi.nearest_index}}}};
}

json to_json(const PipelineEvent& ev) {
  return std::visit(
      [](const auto& e) -> json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, SpectrogramEvent>) {
          // 8-bit quantized column
          std::vector<int> q(static_cast<std::size_t>(e.column.values.size()));
          for (std::size_t i = 0; i < q.size(); ++i) {
            q[i] = static_cast<int>(std::lround(e.column.values(static_cast<Eigen::Index>(i)) * 255.0));
          }
          return {{"kind", "spectrogram_column"},
                  {"payload",
                   {{"timestamp", e.column.timestamp},
                    {"state", to_string(e.column.state)},
                    {"values", q}}}};
        } else if constexpr (std::is_same_v<T, DetectionStateEvent>) {
          return {{"kind", "detection_state"},
                  {"payload",
                   {{"active", e.active},
                    {"timestamp", e.timestamp},
                    {"end_reason", e.end_reason ? json(to_string(*e.end_reason)) : json(nullptr)}}}};
        } else if constexpr (std::is_same_v<T, RecognitionEvent>) {
          return {{"kind", "recognition_result"}, {"payload", to_json(e.result)}};
        } else if constexpr (std::is_same_v<T, DelayWarningEvent>) {
          return {{"kind", "delay_warning"},
                  {"payload", {{"lag_s", e.lag_s}, {"timestamp", e.timestamp}, {"dropped_columns", 0}}}};
        } else {
          return {{"kind", "pending_label_request"},
                  {"payload",
                   {{"pending_id", e.pending_id},
                    {"duration_s", e.duration_s},
                    {"end_reason", to_string(e.end_reason)}}}};
        }
      },
      ev);
}

EventHub::EventHub(std::size_t backlog) : backlog_(std::max<std::size_t>(backlog, 2)) {}

void EventHub::publish(const PipelineEvent& ev) {
  const json j = to_json(ev);
  const bool column = std::holds_alternative<SpectrogramEvent>(ev);
  std::lock_guard lock(m_);
  for (const auto& sub : subs_) {
    std::lock_guard sl(sub->m);
    if (column && sub->columns >= backlog_) {
      ++sub->dropped;
      if (!sub->dropping) {
        sub->dropping = true;
        const auto& col = std::get<SpectrogramEvent>(ev).column;
        // Queued columns approximate how far the consumer trails the stream.
        const double lag = static_cast<double>(sub->columns) * kDisplayFftSize / kSampleRate;
        sub->queue.push_back({{"kind", "delay_warning"},
                              {"payload",
                               {{"lag_s", lag},
                                {"timestamp", col.timestamp},
                                {"dropped_columns", sub->dropped}}}});
      }
    } else {
      sub->queue.push_back(j);
      if (column) ++sub->columns;
    }
    sub->cv.notify_one();
  }
}

std::shared_ptr<EventHub::Subscriber> EventHub::subscribe() {
  auto sub = std::make_shared<Subscriber>();
  std::lock_guard lock(m_);
  sub->closed = closed_;
  subs_.push_back(sub);
  return sub;
}

void EventHub::unsubscribe(const std::shared_ptr<Subscriber>& sub) {
  std::lock_guard lock(m_);
  std::erase(subs_, sub);
}

void EventHub::close_all() {
  std::lock_guard lock(m_);
  closed_ = true;
  for (const auto& sub : subs_) {
    std::lock_guard sl(sub->m);
    sub->closed = true;
    sub->cv.notify_all();
  }
}

std::size_t EventHub::count() const {
  std::lock_guard lock(m_);
  return subs_.size();
}

EventHub::Batch EventHub::next(Subscriber& sub, std::chrono::milliseconds timeout, std::size_t max) {
  std::unique_lock lock(sub.m);
  sub.cv.wait_for(lock, timeout, [&] { return !sub.queue.empty() || sub.closed; });
  Batch out;
  while (!sub.queue.empty() && out.events.size() < max) {
    json j = std::move(sub.queue.front());
    sub.queue.pop_front();
    if (j["kind"] == "spectrogram_column") {
      --sub.columns;
      if (sub.dropping && sub.columns <= backlog_ / 2) sub.dropping = false;
    }
    j["seq"] = sub.next_seq++;
    out.events.push_back(std::move(j));
  }
  out.closed = sub.closed && sub.queue.empty();
  return out;
}

struct Service::Impl {
  ServiceOptions opts;
  std::shared_ptr<KnowledgeStore> store;
  EventHub hub;
  Engine engine;
  httplib::Server server;
  std::thread listener;
  int port = -1;
  std::atomic<bool> stopping{false};

  std::mutex session_mutex;
  std::jthread session;
  std::atomic<bool> session_running{false};
  std::mutex status_mutex;
  json last_recording = nullptr;

  explicit Impl(ServiceOptions o)
      : opts(std::move(o)),
        store(std::make_shared<KnowledgeStore>(
            std::filesystem::exists(opts.kb_dir / kManifestName) ? load(opts.kb_dir) : KnowledgeBase{},
            opts.kb_dir)),
        hub(opts.column_backlog),
        engine(store, opts.pipeline, [this](const PipelineEvent& ev) { hub.publish(ev); }) {
    routes();
  }

  void start_session(std::function<void(std::stop_token)> fn) {
    std::lock_guard lock(session_mutex);
    if (session_running) throw SessionBusyError("session busy: " + std::string(to_string(engine.mode())));
    if (session.joinable()) session.join();
    session_running = true;
    session = std::jthread([this, fn = std::move(fn)](std::stop_token st) {
      try {
        fn(st);
      } catch (const std::exception& e) {
        std::cerr << "session ended with error: " << e.what() << '\n';
      }
      session_running = false;
    });
  }

  bool stop_session() {
    std::lock_guard lock(session_mutex);
    const bool was_running = session_running;
    if (session.joinable()) {
      session.request_stop();
      session.join();
    }
    return was_running;
  }

  void require_idle() {
    if (session_running) throw SessionBusyError("session busy: " + std::string(to_string(engine.mode())));
  }

  json session_json() {
    const auto model = engine.current_model();
    std::lock_guard lock(status_mutex);
    return {{"mode", to_string(engine.mode())},
            {"active_environment", opt_string(engine.active_environment())},
            {"kb_revision", store->snapshot()->revision()},
            {"model_revision", model ? json(model->revision) : json(nullptr)},
            {"model_stale", engine.model_stale()},
            {"session_running", session_running.load()},
            {"pending", engine.pending_ids()},
            {"last_recording", last_recording},
            {"subscribers", hub.count()}};
  }

  json config_json() const {
    const auto& c = engine.config();
    json per_class = json::object();
    for (const auto& [name, t] : c.class_thresholds) per_class[name] = thresholds_json(t);
    return {{"admission",
             {{"rms_min", c.admission.rms_min},
              {"entropy_max_norm", c.admission.entropy_max_norm},
              {"hangover_frames", c.admission.hangover_frames},
              {"min_len_s", c.admission.min_len_s},
              {"max_len_s", c.admission.max_len_s}}},
            {"columns_rate", c.columns_rate},
            {"delay_warning_s", c.delay_warning_s},
            {"recording_timeout_s", c.recording_timeout_s},
            {"history_capacity", c.history_capacity},
            {"thresholds", thresholds_json(c.thresholds)},
            {"class_thresholds", per_class}};
  }

  void routes() {
    auto& s = server;
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      const auto info = classify_error(ep);
      reply(res, {{"error", {{"code", info.code}, {"message", error_message(ep)}}}}, info.status);
    });
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const char* code = res.status == 404 ? "not_found" : "bad_request";
        reply(res, {{"error", {{"code", code}, {"message", httplib::status_message(res.status)}}}},
              res.status);
      }
    });

    s.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, {{"status", "ok"}});
    });

    // Sound classes
    s.Get("/api/sounds", [this](const httplib::Request&, httplib::Response& res) {
      const auto kb = store->snapshot();
      json out = json::array();
      for (const auto& [name, c] : kb->classes()) out.push_back(class_json(*kb, c));
      reply(res, out);
    });
    s.Post("/api/sounds", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto name = body.at("name").get<std::string>();
      const auto importance = importance_from_string(body.value("importance", "usual"));
      store->mutate([&](KnowledgeBase& kb) { kb.create_class(name, importance); });
      const auto kb = store->snapshot();
      reply(res, class_json(*kb, kb->find_class(name)), 201);
    });
    s.Get(R"(/api/sounds/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto kb = store->snapshot();
      reply(res, class_json(*kb, kb->find_class(req.matches[1])));
    });
    s.Patch(R"(/api/sounds/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const std::string name = req.matches[1];
      std::optional<Importance> importance;
      if (auto i = opt_field(body, "importance")) importance = importance_from_string(*i);
      std::optional<bool> excluded;
      if (body.contains("excluded")) excluded = body["excluded"].get<bool>();
      const auto new_name = opt_field(body, "name");
      store->mutate([&](KnowledgeBase& kb) { kb.update_class(name, importance, excluded, new_name); });
      const auto kb = store->snapshot();
      reply(res, class_json(*kb, kb->find_class(new_name.value_or(name))));
    });
    s.Delete(R"(/api/sounds/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      store->mutate([&](KnowledgeBase& kb) { kb.delete_class(req.matches[1]); });
      res.status = 204;
    });

    // Records
    s.Get("/api/records", [this](const httplib::Request& req, httplib::Response& res) {
      const auto kb = store->snapshot();
      const auto cls = req.has_param("class") ? std::optional(req.get_param_value("class")) : std::nullopt;
      const auto env = req.has_param("environment") ? std::optional(req.get_param_value("environment"))
                                                    : std::nullopt;
      json out = json::array();
      for (const auto& r : kb->records()) {
        if (cls && r.class_name != *cls) continue;
        if (env && r.environment.value_or(std::string(kNoEnvironment)) != *env) continue;
        out.push_back(record_json(r, false));
      }
      reply(res, out);
    });
    s.Get(R"(/api/records/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, record_json(store->snapshot()->find_record(std::stoull(req.matches[1])), true));
    });
    s.Delete(R"(/api/records/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      store->mutate([&](KnowledgeBase& kb) { kb.delete_record(std::stoull(req.matches[1])); });
      res.status = 204;
    });
    s.Get(R"(/api/records/(\d+)/audio)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto kb = store->snapshot();
      const auto& rec = kb->find_record(std::stoull(req.matches[1]));
      const auto audio = record_audio(rec, opts.kb_dir);
      if (!audio) throw NotFoundError("record has no stored audio");
      const auto bytes = encode_wav(*audio);
      res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
    });

    // Environments
    s.Get("/api/environments", [this](const httplib::Request&, httplib::Response& res) {
      const auto kb = store->snapshot();
      const auto groups = kb->list_by_environment();
      json out = json::array();
      for (const auto& label : kb->environments()) {
        const auto it = groups.find(label);
        out.push_back({{"name", label},
                       {"records", it != groups.end() ? json(it->second) : json::array()}});
      }
      reply(res, out);
    });
    s.Post("/api/environments", [this](const httplib::Request& req, httplib::Response& res) {
      const auto name = parse_body(req).at("name").get<std::string>();
      if (name.empty()) throw ValidationError("environment name must not be empty");
      store->mutate([&](KnowledgeBase& kb) { kb.add_environment(name); });
      reply(res, {{"name", name}}, 201);
    });
    s.Patch(R"(/api/environments/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto to = parse_body(req).at("name").get<std::string>();
      store->mutate([&](KnowledgeBase& kb) { kb.rename_environment(req.matches[1], to); });
      reply(res, {{"name", to}});
    });
    s.Delete(R"(/api/environments/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      store->mutate([&](KnowledgeBase& kb) { kb.delete_environment(req.matches[1]); });
      res.status = 204;
    });

    // Recording
    s.Post("/api/record/start", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      std::shared_ptr<AudioSource> src = open_source(body);
      start_session([this, src](std::stop_token st) {
        const auto out = engine.run_recording(*src, st);
        json j = {{"status", to_string(out.status)}};
        if (out.capture) {
          j["pending_id"] = out.pending_id;
          j["duration_s"] = out.capture->segment.duration();
          j["end_reason"] = to_string(out.capture->segment.end_reason);
        }
        std::lock_guard lock(status_mutex);
        last_recording = j;
      });
      reply(res, {{"mode", "recording"}}, 202);
    });
    s.Post("/api/record/stop", [this](const httplib::Request&, httplib::Response& res) {
      const bool stopped = stop_session();
      reply(res, {{"stopped", stopped}, {"last_recording", session_json()["last_recording"]}});
    });
    s.Get("/api/record/pending", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, engine.pending_ids());
    });
    s.Post("/api/record/label", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto label = body.at("label").get<std::string>();
      const auto id = engine.label_pending(body.at("pending_id").get<std::uint64_t>(), label,
                                           opt_field(body, "environment"));
      reply(res, record_json(store->snapshot()->find_record(id), false), 201);
    });
    s.Post("/api/record/cancel", [this](const httplib::Request& req, httplib::Response& res) {
      engine.cancel_pending(parse_body(req).at("pending_id").get<std::uint64_t>());
      res.status = 204;
    });

    // Recognition
    s.Post("/api/recognize", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      require_idle();
      auto src = open_source(body);
      const auto r = engine.run_manual_recognition(*src, opt_field(body, "environment"));
      reply(res, {{"result", r ? to_json(*r) : json(nullptr)}});
    });
    s.Post("/api/auto/start", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto env = opt_field(body, "environment");
      require_idle();
      std::shared_ptr<AudioSource> src = open_source(body);
      try {
        engine.ensure_trained(env);
      } catch (const TrainingError& e) {
        throw CannotRecognizeError(std::string("cannot recognize: ") + e.what());
      }
      start_session([this, src, env](std::stop_token st) { engine.run_auto_recognition(*src, st, env); });
      reply(res, {{"mode", "auto_recognition"}}, 202);
    });
    s.Post("/api/auto/stop", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, {{"stopped", stop_session()}});
    });
    s.Get("/api/history", [this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& r : engine.history().snapshot()) out.push_back(to_json(r));
      reply(res, out);
    });
    s.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, session_json());
    });
    s.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, config_json());
    });

    // Event stream
    s.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
      auto sub = hub.subscribe();
      res.set_header("Cache-Control", "no-cache");
      auto greeted = std::make_shared<bool>(false);
      auto idle_ticks = std::make_shared<int>(0);
      res.set_chunked_content_provider(
          "text/event-stream",
          [this, sub, greeted, idle_ticks](std::size_t, httplib::DataSink& sink) {
            if (!*greeted) {
              *greeted = true;
              const std::string hello = ": connected\n\n";
              return sink.write(hello.data(), hello.size());
            }
            auto next = hub.next(*sub, std::chrono::milliseconds(200));
            if (next.closed && next.events.empty()) {
              sink.done();
              return true;
            }
            const auto& batch = next.events;
            if (batch.empty()) {
              if (++*idle_ticks < 10) return true;
              *idle_ticks = 0;
              const std::string ping = ": ping\n\n";
              return sink.write(ping.data(), ping.size());
            }
            *idle_ticks = 0;
            for (const auto& env : batch) {
              const std::string msg = "id: " + std::to_string(env["seq"].get<std::uint64_t>()) +
                                      "\nevent: " + env["kind"].get<std::string>() +
                                      "\ndata: " + env.dump() + "\n\n";
              if (!sink.write(msg.data(), msg.size())) return false;
            }
            return true;
          },
          [this, sub](bool) { hub.unsubscribe(sub); });
    });
  }
};

Service::Service(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {
  auto& s = impl_->server;
  // Plain SO_REUSEADDR: the library default also sets SO_REUSEPORT, which would
  // let a second instance share a busy port.
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  s.new_task_queue = [] { return new httplib::ThreadPool(16); };
}

Service::~Service() { stop(); }

int Service::bind() {
  auto& i = *impl_;
  if (i.port >= 0) return i.port;
  if (i.opts.port == 0) {
    i.port = i.server.bind_to_any_port(i.opts.host);
  } else if (i.server.bind_to_port(i.opts.host, i.opts.port)) {
    i.port = i.opts.port;
  }
  if (i.port < 0) {
    throw DomainError("cannot listen on " + i.opts.host + ":" + std::to_string(i.opts.port));
  }
  return i.port;
}

void Service::start() {
  bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::stop() {
  auto& i = *impl_;
  if (i.stopping.exchange(true)) return;
  i.stop_session();
  i.hub.close_all();
  i.server.stop();
  if (i.listener.joinable()) i.listener.join();
}

int Service::port() const noexcept { return impl_->port; }

Engine& Service::engine() { return impl_->engine; }

}  // namespace esr
