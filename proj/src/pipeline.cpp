#include "esr/pipeline.hpp"

#include <chrono>
#include <future>
#include <iostream>
#include <limits>

#include "esr/errors.hpp"

namespace esr {

namespace {

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::int64_t unix_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

double frame_end_time(const Frame& f) {
  return static_cast<double>((f.index + 1) * kFrameSize) / kSampleRate;
}

SampleBuffer segment_audio(const SegmentEvent& seg) {
  std::vector<double> samples;
  samples.reserve(seg.frames.size() * kFrameSize);
  for (const auto& f : seg.frames) samples.insert(samples.end(), f.samples.begin(), f.samples.end());
  return SampleBuffer(std::move(samples));
}

}  // namespace

std::string_view to_string(Visibility v) noexcept {
  return v == Visibility::shown ? "shown" : "suppressed";
}

std::string_view to_string(RecordingStatus s) noexcept {
  switch (s) {
    case RecordingStatus::captured: return "captured";
    case RecordingStatus::timeout: return "timeout";
    case RecordingStatus::discarded: return "discarded";
  }
  return "timeout";
}

std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::idle: return "idle";
    case Mode::recording: return "recording";
    case Mode::manual_recognition: return "manual_recognition";
    case Mode::auto_recognition: return "auto_recognition";
  }
  return "idle";
}

History::History(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

void History::append(RecognitionResult r) {
  std::lock_guard lock(mutex_);
  items_.push_back(std::move(r));
  while (items_.size() > capacity_) items_.pop_front();
}

std::vector<RecognitionResult> History::snapshot() const {
  std::lock_guard lock(mutex_);
  return {items_.begin(), items_.end()};
}

RecognitionResult recognize(const TrainedModel& model, const FeatureVector54& features,
                            const KnowledgeBase& kb, const PipelineConfig& cfg) {
  const auto posteriors = model.classifier.classify(features);
  const auto& top = posteriors.front();
  const Eigen::MatrixXd members = model.data.rows_of(top.class_name);
  const auto it = cfg.class_thresholds.find(top.class_name);
  const LevelThresholds& thresholds = it != cfg.class_thresholds.end() ? it->second : cfg.thresholds;

  RecognitionResult r;
  r.class_name = top.class_name;
  r.posterior = top.probability;
  r.gpi = gpi(features, members, thresholds);
  r.gpi.class_name = top.class_name;
  r.level = r.gpi.level;
  const auto cls = kb.classes().find(top.class_name);
  r.importance = cls != kb.classes().end() ? cls->second.importance : Importance::usual;
  r.display = r.importance == Importance::ignore ? Visibility::suppressed : Visibility::shown;
  r.model_revision = model.revision;
  return r;
}

class Engine::ModeGuard {
 public:
  ModeGuard(Engine& e, Mode m, std::optional<std::string> env) : e_(e) {
    std::lock_guard lock(e_.mode_mutex_);
    if (e_.mode_ != Mode::idle) {
      throw SessionBusyError(std::string("session busy: ") + std::string(to_string(e_.mode_)));
    }
    e_.mode_ = m;
    e_.environment_ = std::move(env);
  }
  ~ModeGuard() {
    std::lock_guard lock(e_.mode_mutex_);
    e_.mode_ = Mode::idle;
    e_.environment_.reset();
  }
  ModeGuard(const ModeGuard&) = delete;
  ModeGuard& operator=(const ModeGuard&) = delete;

 private:
  Engine& e_;
};

/// The real-time path: frames, admission, segmentation, spectrogram columns.
class Engine::Capture {
 public:
  struct Summary {
    bool stopped = false;
    bool aborted = false;
  };
  using SegmentFn = std::function<bool(SegmentEvent&&, double closed_at)>;
  using ProgressFn = std::function<bool(double stream_time, bool open)>;

  Capture(Engine& e, AudioSource& source, std::stop_token stop)
      : e_(e), source_(source), stop_(std::move(stop)), segmenter_(e.cfg_.admission),
        decimator_(e.cfg_.columns_rate) {}

  Summary run(const SegmentFn& on_segment, const ProgressFn& progress = {}) {
    Summary summary;
    started_ = e_.now();
    while (!stop_.stop_requested()) {
      auto chunk = source_.next_chunk();
      if (!chunk) break;
      for (const auto& f : framer_.push(*chunk)) {
        if (!handle(f, on_segment, progress)) {
          summary.aborted = true;
          return summary;
        }
      }
    }
    summary.stopped = stop_.stop_requested();
    if (!summary.stopped) {
      if (auto last = framer_.flush()) {
        if (!handle(*last, on_segment, progress)) {
          summary.aborted = true;
          return summary;
        }
      }
    }
    const bool was_open = segmenter_.open();
    auto ev = segmenter_.stop();
    if (was_open) {
      e_.emit(DetectionStateEvent{false, last_time_,
                                  ev ? std::optional(ev->end_reason) : std::nullopt});
    }
    if (ev) on_segment(std::move(*ev), e_.now());
    return summary;
  }

 private:
  bool handle(const Frame& f, const SegmentFn& on_segment, const ProgressFn& progress) {
    const Admission adm = admit_frame(f, e_.cfg_.admission);
    auto ev = segmenter_.push(f, adm);
    const bool open = segmenter_.open();
    last_time_ = frame_end_time(f);
    if (open && !was_open_) e_.emit(DetectionStateEvent{true, f.start_time(), std::nullopt});
    if (was_open_ && !open) {
      e_.emit(DetectionStateEvent{false, last_time_,
                                  ev ? std::optional(ev->end_reason) : std::nullopt});
    }
    const bool active = open || was_open_;
    was_open_ = open;

    if (f.index % 2 == 1 && half_) {
      if (decimator_.keep()) {
        Eigen::ArrayXd joined(static_cast<Eigen::Index>(kDisplayFftSize));
        joined << half_->samples, f.samples;
        e_.emit(SpectrogramEvent{spectrogram_column(
            joined, active ? DisplayState::active : DisplayState::monitor, half_->start_time())});
      }
      half_.reset();
      const double lag = (e_.now() - started_) - last_time_;
      if (lag > e_.cfg_.delay_warning_s && last_time_ - last_warning_ >= 1.0) {
        last_warning_ = last_time_;
        e_.emit(DelayWarningEvent{lag, last_time_});
      }
    } else {
      half_ = f;
    }

    if (ev && !on_segment(std::move(*ev), e_.now())) return false;
    if (progress && !progress(last_time_, open)) return false;
    return true;
  }

  Engine& e_;
  AudioSource& source_;
  std::stop_token stop_;
  Framer framer_;
  Segmenter segmenter_;
  ColumnDecimator decimator_;
  std::optional<Frame> half_;
  bool was_open_ = false;
  double started_ = 0.0;
  double last_time_ = 0.0;
  double last_warning_ = -std::numeric_limits<double>::infinity();
};

Engine::Engine(std::shared_ptr<KnowledgeStore> store, PipelineConfig cfg, EventSink sink)
    : store_(std::move(store)), cfg_(std::move(cfg)), sink_(std::move(sink)),
      history_(cfg_.history_capacity) {
  cfg_.admission.validate();
  ColumnDecimator check(cfg_.columns_rate);
  (void)check;
  if (!cfg_.clock) cfg_.clock = steady_seconds;
}

void Engine::set_sink(EventSink sink) {
  std::lock_guard lock(sink_mutex_);
  sink_ = std::move(sink);
}

void Engine::emit(const PipelineEvent& ev) {
  std::lock_guard lock(sink_mutex_);
  if (sink_) sink_(ev);
}

double Engine::now() const { return cfg_.clock(); }

Mode Engine::mode() const {
  std::lock_guard lock(mode_mutex_);
  return mode_;
}

std::optional<std::string> Engine::active_environment() const {
  std::lock_guard lock(mode_mutex_);
  return environment_;
}

std::shared_ptr<const TrainedModel> Engine::ensure_trained(
    const std::optional<std::string>& environment) {
  std::lock_guard train(train_mutex_);
  const auto kb = store_->snapshot();
  {
    std::lock_guard lock(model_mutex_);
    if (model_ && model_->revision == kb->revision() && model_->environment == environment) {
      return model_;
    }
  }
  auto data = training_set(*kb, environment);
  auto next = std::make_shared<TrainedModel>();
  next->classifier = train_naive_bayes(data, kb->revision());
  next->data = std::move(data);
  next->environment = environment;
  next->revision = kb->revision();
  std::lock_guard lock(model_mutex_);
  model_ = std::move(next);
  return model_;
}

std::shared_ptr<const TrainedModel> Engine::current_model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

bool Engine::model_stale() const {
  const auto rev = store_->snapshot()->revision();
  std::lock_guard lock(model_mutex_);
  return !model_ || model_->revision != rev;
}

RecordingOutcome Engine::run_recording(AudioSource& source, std::stop_token stop) {
  ModeGuard guard(*this, Mode::recording, std::nullopt);
  RecordingOutcome outcome;
  bool timed_out = false;
  Capture capture(*this, source, stop);
  const auto summary = capture.run(
      [&](SegmentEvent&& seg, double) {
        CapturedSegment c;
        c.features = extract_segment_features(seg.frames);
        c.audio = segment_audio(seg);
        c.segment = std::move(seg);
        PendingLabelEvent pending{0, c.segment.duration(), c.segment.end_reason};
        {
          std::lock_guard lock(pending_mutex_);
          pending.pending_id = next_pending_++;
          pending_.emplace(pending.pending_id, c);
        }
        outcome.status = RecordingStatus::captured;
        outcome.capture = std::move(c);
        outcome.pending_id = pending.pending_id;
        emit(pending);
        return false;
      },
      [&](double t, bool open) {
        if (!open && t >= cfg_.recording_timeout_s) {
          timed_out = true;
          return false;
        }
        return true;
      });
  if (outcome.capture) return outcome;
  outcome.status = summary.stopped && !timed_out ? RecordingStatus::discarded : RecordingStatus::timeout;
  return outcome;
}

RecordId Engine::label_pending(std::uint64_t pending_id, const std::string& class_name,
                               const std::optional<std::string>& environment) {
  std::lock_guard lock(pending_mutex_);
  auto it = pending_.find(pending_id);
  if (it == pending_.end()) throw NotFoundError("no pending capture " + std::to_string(pending_id));
  NewRecord rec;
  rec.class_name = class_name;
  rec.environment = environment;
  rec.features = it->second.features;
  rec.audio = std::make_shared<const SampleBuffer>(it->second.audio);
  const RecordId id = store_->mutate([&](KnowledgeBase& kb) { return kb.add_record(rec); });
  pending_.erase(it);
  return id;
}

void Engine::cancel_pending(std::uint64_t pending_id) {
  std::lock_guard lock(pending_mutex_);
  if (pending_.erase(pending_id) == 0) {
    throw NotFoundError("no pending capture " + std::to_string(pending_id));
  }
}

std::vector<std::uint64_t> Engine::pending_ids() const {
  std::lock_guard lock(pending_mutex_);
  std::vector<std::uint64_t> ids;
  for (const auto& [id, c] : pending_) ids.push_back(id);
  return ids;
}

std::optional<RecognitionResult> Engine::run_manual_recognition(
    AudioSource& source, const std::optional<std::string>& environment, std::stop_token stop) {
  ModeGuard guard(*this, Mode::manual_recognition, environment);
  try {
    ensure_trained(environment);
  } catch (const TrainingError& e) {
    throw CannotRecognizeError(std::string("cannot recognize: ") + e.what());
  }
  const std::int64_t wall_start = unix_ms();
  std::optional<RecognitionResult> result;
  Capture capture(*this, source, stop);
  capture.run([&](SegmentEvent&& seg, double closed_at) {
    const auto model = ensure_trained(environment);
    const auto features = extract_segment_features(seg.frames);
    auto r = recognize(*model, features, *store_->snapshot(), cfg_);
    r.stream_time_s = seg.start_time;
    r.duration_s = seg.duration();
    r.wall_time_ms = wall_start + static_cast<std::int64_t>(seg.start_time * 1000.0);
    r.latency_ms = (now() - closed_at) * 1000.0;
    history_.append(r);
    if (r.display == Visibility::shown) emit(RecognitionEvent{r});
    result = std::move(r);
    return false;
  });
  return result;
}

std::vector<RecognitionResult> Engine::run_auto_recognition(
    AudioSource& source, std::stop_token stop, const std::optional<std::string>& environment) {
  ModeGuard guard(*this, Mode::auto_recognition, environment);
  try {
    ensure_trained(environment);
  } catch (const TrainingError& e) {
    throw CannotRecognizeError(std::string("cannot recognize: ") + e.what());
  }
  const std::int64_t wall_start = unix_ms();

  // Results leave in segment order even when tasks finish out of order.
  std::mutex order_mutex;
  std::map<std::uint64_t, std::optional<RecognitionResult>> done;
  std::map<std::uint64_t, double> closed;
  std::uint64_t next_out = 0;
  std::vector<RecognitionResult> emitted;
  auto complete = [&](std::uint64_t seq, std::optional<RecognitionResult> r) {
    std::lock_guard lock(order_mutex);
    done.emplace(seq, std::move(r));
    for (auto it = done.find(next_out); it != done.end(); it = done.find(next_out)) {
      if (it->second) {
        auto& res = *it->second;
        res.latency_ms = (now() - closed.at(next_out)) * 1000.0;
        history_.append(res);
        if (res.display == Visibility::shown) emit(RecognitionEvent{res});
        emitted.push_back(std::move(res));
      }
      done.erase(it);
      ++next_out;
    }
  };

  std::vector<std::future<void>> tasks;
  std::uint64_t seq = 0;
  Capture capture(*this, source, stop);
  capture.run([&](SegmentEvent&& seg, double closed_at) {
    const std::uint64_t id = seq++;
    {
      std::lock_guard lock(order_mutex);
      closed[id] = closed_at;
    }
    tasks.push_back(std::async(std::launch::async, [this, id, &complete, &environment, wall_start,
                                                    seg = std::move(seg)]() {
      try {
        const auto model = ensure_trained(environment);
        if (hooks_.model_acquired) hooks_.model_acquired(id, *model);
        const auto features = extract_segment_features(seg.frames);
        auto r = recognize(*model, features, *store_->snapshot(), cfg_);
        r.sequence = id;
        r.stream_time_s = seg.start_time;
        r.duration_s = seg.duration();
        r.wall_time_ms = wall_start + static_cast<std::int64_t>(seg.start_time * 1000.0);
        complete(id, std::move(r));
      } catch (const std::exception& e) {
        std::cerr << "segment " << id << " failed: " << e.what() << '\n';
        complete(id, std::nullopt);
      }
    }));
    return true;
  });
  for (auto& t : tasks) t.wait();
  return emitted;
}

}  // namespace esr
