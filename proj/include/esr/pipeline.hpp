#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "esr/audio_io.hpp"
#include "esr/classification.hpp"
#include "esr/confidence.hpp"
#include "esr/detection.hpp"
#include "esr/dsp.hpp"
#include "esr/features.hpp"
#include "esr/knowledge_base.hpp"

namespace esr {

enum class Visibility { shown, suppressed };
enum class Mode { idle, recording, manual_recognition, auto_recognition };

std::string_view to_string(Visibility v) noexcept;
std::string_view to_string(Mode m) noexcept;

struct RecognitionResult {
  std::uint64_t sequence = 0;   // segment ordinal within the session
  double stream_time_s = 0.0;   // segment start, seconds since capture began
  double duration_s = 0.0;
  std::int64_t wall_time_ms = 0;  // detection time, Unix milliseconds
  std::string class_name;
  double posterior = 0.0;
  GpiResult<double> gpi;
  int level = 0;
  Importance importance = Importance::usual;
  Visibility display = Visibility::shown;
  std::uint64_t model_revision = 0;
  double latency_ms = 0.0;  // segment close to result emission
};

/// Bounded append-only log of recognition results, oldest evicted first.
class History {
 public:
  explicit History(std::size_t capacity = 500);
  void append(RecognitionResult r);
  std::vector<RecognitionResult> snapshot() const;
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<RecognitionResult> items_;
};

struct SpectrogramEvent {
  SpectrogramColumn column;
};
struct DetectionStateEvent {
  bool active = false;
  double timestamp = 0.0;
  std::optional<EndReason> end_reason;
};
struct RecognitionEvent {
  RecognitionResult result;
};
struct DelayWarningEvent {
  double lag_s = 0.0;
  double timestamp = 0.0;
};
struct PendingLabelEvent {
  std::uint64_t pending_id = 0;
  double duration_s = 0.0;
  EndReason end_reason = EndReason::silence;
};

using PipelineEvent = std::variant<SpectrogramEvent, DetectionStateEvent, RecognitionEvent,
                                   DelayWarningEvent, PendingLabelEvent>;
using EventSink = std::function<void(const PipelineEvent&)>;

struct PipelineConfig {
  AdmissionConfig admission;
  int columns_rate = 23;
  double delay_warning_s = 0.25;
  double recording_timeout_s = 30.0;
  std::size_t history_capacity = 500;
  LevelThresholds thresholds;
  std::map<std::string, LevelThresholds> class_thresholds;
  /// Monotonic seconds; replaceable so lag detection is testable.
  std::function<double()> clock;
};

/// A model trained from one KB revision under one environment filter.
struct TrainedModel {
  NaiveBayesModel classifier;
  TrainingSet data;
  std::optional<std::string> environment;
  std::uint64_t revision = 0;
};

struct CapturedSegment {
  SegmentEvent segment;
  FeatureVector54 features;
  SampleBuffer audio;
};

enum class RecordingStatus { captured, timeout, discarded };

std::string_view to_string(RecordingStatus s) noexcept;

struct RecordingOutcome {
  RecordingStatus status = RecordingStatus::timeout;
  std::optional<CapturedSegment> capture;
  std::uint64_t pending_id = 0;  // set when captured; see Engine::label_pending
};

struct PipelineHooks {
  /// Runs on the worker after a segment task has picked its model.
  std::function<void(std::uint64_t sequence, const TrainedModel&)> model_acquired;
};

/// Classifies a feature vector and scores it against the recognized class.
RecognitionResult recognize(const TrainedModel& model, const FeatureVector54& features,
                            const KnowledgeBase& kb, const PipelineConfig& cfg);

/// Orchestrates recording, manual and automatic recognition for one session.
class Engine {
 public:
  Engine(std::shared_ptr<KnowledgeStore> store, PipelineConfig cfg = {}, EventSink sink = {});

  /// Rebuilds iff the KB revision or environment filter changed. Swaps atomically.
  std::shared_ptr<const TrainedModel> ensure_trained(
      const std::optional<std::string>& environment = std::nullopt);
  bool model_stale() const;
  /// The last trained model, if any.
  std::shared_ptr<const TrainedModel> current_model() const;

  /// A captured segment is held under its pending id until labeled or cancelled.
  RecordingOutcome run_recording(AudioSource& source, std::stop_token stop = {});
  /// Stores a pending capture as a record of `class_name`. NotFoundError if unknown.
  RecordId label_pending(std::uint64_t pending_id, const std::string& class_name,
                         const std::optional<std::string>& environment = std::nullopt);
  void cancel_pending(std::uint64_t pending_id);
  std::vector<std::uint64_t> pending_ids() const;
  /// nullopt when the source ended without a detected sound.
  std::optional<RecognitionResult> run_manual_recognition(
      AudioSource& source, const std::optional<std::string>& environment = std::nullopt,
      std::stop_token stop = {});
  /// Blocks until the source ends or stop is requested; returns results in emission order.
  std::vector<RecognitionResult> run_auto_recognition(
      AudioSource& source, std::stop_token stop = {},
      const std::optional<std::string>& environment = std::nullopt);

  Mode mode() const;
  std::optional<std::string> active_environment() const;
  const History& history() const noexcept { return history_; }
  const PipelineConfig& config() const noexcept { return cfg_; }
  void set_hooks(PipelineHooks hooks) { hooks_ = std::move(hooks); }
  void set_sink(EventSink sink);
  KnowledgeStore& store() noexcept { return *store_; }

 private:
  class ModeGuard;
  class Capture;

  void emit(const PipelineEvent& ev);
  double now() const;

  std::shared_ptr<KnowledgeStore> store_;
  PipelineConfig cfg_;
  EventSink sink_;
  mutable std::mutex sink_mutex_;
  PipelineHooks hooks_;
  History history_;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const TrainedModel> model_;
  mutable std::mutex train_mutex_;

  mutable std::mutex mode_mutex_;
  Mode mode_ = Mode::idle;
  std::optional<std::string> environment_;

  mutable std::mutex pending_mutex_;
  std::map<std::uint64_t, CapturedSegment> pending_;
  std::uint64_t next_pending_ = 1;
};

}  // namespace esr
