#include <doctest.h>

#include <atomic>
#include <condition_variable>
#include <thread>

#include "esr/errors.hpp"
#include "esr/pipeline.hpp"
#include "support/signals.hpp"

using namespace esr;
using testing::concat;
using testing::noise;
using testing::silence;
using testing::tone;

namespace {

std::vector<double> beep(double amp = 0.3) { return tone(1000.0, amp, 0.8); }
std::vector<double> hiss(double amp = 0.3, std::uint64_t seed = 1) { return noise(amp, 0.8, seed); }

SampleBuffer padded(const std::vector<double>& burst) {
  return SampleBuffer(concat({silence(0.3), burst, silence(0.6)}));
}

FeatureVector54 features_of(const SampleBuffer& buf) {
  const auto segs = segment_buffer(buf);
  REQUIRE(segs.size() == 1);
  return extract_segment_features(segs[0].frames);
}

std::shared_ptr<KnowledgeStore> toy_store() {
  KnowledgeBase kb;
  kb.add_record("Beep", std::nullopt, features_of(padded(beep(0.3))));
  kb.add_record("Beep", std::nullopt, features_of(padded(beep(0.5))));
  kb.add_record("Hiss", std::nullopt, features_of(padded(hiss(0.3, 1))));
  kb.add_record("Hiss", std::nullopt, features_of(padded(hiss(0.4, 2))));
  return std::make_shared<KnowledgeStore>(std::move(kb));
}

struct Recorder {
  std::mutex m;
  std::vector<PipelineEvent> events;
  EventSink sink() {
    return [this](const PipelineEvent& e) {
      std::lock_guard lock(m);
      events.push_back(e);
    };
  }
  template <typename T>
  std::vector<T> of() {
    std::lock_guard lock(m);
    std::vector<T> out;
    for (const auto& e : events) {
      if (auto* p = std::get_if<T>(&e)) out.push_back(*p);
    }
    return out;
  }
};

// Replays a buffer but blocks at `gate_at` samples until released.
class GatedSource : public AudioSource {
 public:
  GatedSource(std::vector<double> x, std::size_t gate_at) : x_(std::move(x)), gate_at_(gate_at) {}
  std::optional<std::vector<double>> next_chunk() override {
    if (pos_ >= x_.size()) return std::nullopt;
    if (pos_ >= gate_at_) {
      std::unique_lock lock(m_);
      cv_.wait(lock, [&] { return open_; });
    }
    const auto n = std::min<std::size_t>(kFrameSize, x_.size() - pos_);
    std::vector<double> out(x_.begin() + static_cast<long>(pos_), x_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return out;
  }
  void release() {
    std::lock_guard lock(m_);
    open_ = true;
    cv_.notify_all();
  }

 private:
  std::vector<double> x_;
  std::size_t gate_at_;
  std::size_t pos_ = 0;
  std::mutex m_;
  std::condition_variable cv_;
  bool open_ = false;
};

}  // namespace

TEST_CASE("recording captures one segment and announces a pending label") {
  Recorder rec;
  Engine engine(toy_store(), {}, rec.sink());
  const auto buf = padded(beep(0.3));
  FileReplaySource src(buf);
  const auto out = engine.run_recording(src);
  CHECK(out.status == RecordingStatus::captured);
  REQUIRE(out.capture.has_value());
  CHECK(out.capture->features == features_of(buf));
  CHECK(out.capture->audio.size() == out.capture->segment.frames.size() * kFrameSize);
  const auto pending = rec.of<PendingLabelEvent>();
  REQUIRE(pending.size() == 1);
  CHECK(pending[0].end_reason == EndReason::silence);
  CHECK(pending[0].duration_s == doctest::Approx(out.capture->segment.duration()));
  CHECK(rec.of<DetectionStateEvent>().size() == 2);
  CHECK(engine.mode() == Mode::idle);
}

TEST_CASE("recording times out on silence and discards when stopped") {
  PipelineConfig cfg;
  cfg.recording_timeout_s = 1.0;
  Engine engine(toy_store(), cfg);
  FileReplaySource quiet(SampleBuffer(silence(3.0)));
  CHECK(engine.run_recording(quiet).status == RecordingStatus::timeout);

  std::stop_source stop;
  stop.request_stop();
  FileReplaySource any(padded(beep()));
  CHECK(engine.run_recording(any, stop.get_token()).status == RecordingStatus::discarded);
}

TEST_CASE("manual recognition of a stored segment gives its class at level 4 or 5") {
  Recorder rec;
  Engine engine(toy_store(), {}, rec.sink());
  FileReplaySource src(padded(beep(0.3)));
  const auto r = engine.run_manual_recognition(src);
  REQUIRE(r.has_value());
  CHECK(r->class_name == "Beep");
  CHECK(r->level >= 4);
  CHECK(r->gpi.g == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r->level == confidence_level(r->gpi.g));
  CHECK(r->stream_time_s == doctest::Approx(0.3).epsilon(0.05));
  CHECK(rec.of<RecognitionEvent>().size() == 1);
  CHECK(engine.history().snapshot().size() == 1);

  FileReplaySource hiss_src(padded(hiss(0.35, 9)));
  CHECK(engine.run_manual_recognition(hiss_src)->class_name == "Hiss");
}

TEST_CASE("manual recognition errors and silence") {
  Engine empty(std::make_shared<KnowledgeStore>());
  FileReplaySource src(padded(beep()));
  CHECK_THROWS_AS(empty.run_manual_recognition(src), CannotRecognizeError);
  CHECK(empty.mode() == Mode::idle);

  KnowledgeBase kb;
  kb.add_record("Beep", "kitchen", features_of(padded(beep())));
  Engine filtered(std::make_shared<KnowledgeStore>(std::move(kb)));
  FileReplaySource again(padded(beep()));
  CHECK_THROWS_AS(filtered.run_manual_recognition(again, "garden"), CannotRecognizeError);
  FileReplaySource third(padded(beep()));
  CHECK(filtered.run_manual_recognition(third, "kitchen").has_value());

  Engine engine(toy_store());
  FileReplaySource quiet(SampleBuffer(silence(2.0)));
  CHECK_FALSE(engine.run_manual_recognition(quiet).has_value());
}

TEST_CASE("automatic mode returns one result per burst in order") {
  Recorder rec;
  auto store = toy_store();
  store->mutate([](KnowledgeBase& kb) { kb.update_class("Beep", Importance::urgent, std::nullopt, std::nullopt); });
  Engine engine(store, {}, rec.sink());
  const auto x = concat({silence(0.5), beep(0.3), silence(1.0), hiss(0.3, 5), silence(1.0), beep(0.4), silence(0.8)});
  FileReplaySource src{SampleBuffer(x)};
  const auto results = engine.run_auto_recognition(src);
  REQUIRE(results.size() == 3);
  CHECK(results[0].class_name == "Beep");
  CHECK(results[1].class_name == "Hiss");
  CHECK(results[2].class_name == "Beep");
  CHECK(results[0].importance == Importance::urgent);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(results[i].sequence == i);
    CHECK(results[i].level == confidence_level(results[i].gpi.g));
    CHECK(results[i].latency_ms >= 0.0);
    CHECK(results[i].latency_ms < 5000.0);
    if (i) CHECK(results[i].stream_time_s > results[i - 1].stream_time_s);
  }
  CHECK(rec.of<RecognitionEvent>().size() == 3);
  CHECK(engine.history().snapshot().size() == 3);
  // 2 columns per 2 frames at full rate
  const auto frames = (x.size() + kFrameSize - 1) / kFrameSize;
  CHECK(rec.of<SpectrogramEvent>().size() == frames / 2);
  CHECK(rec.of<DelayWarningEvent>().empty());
}

TEST_CASE("ignore importance keeps results out of the event stream") {
  Recorder rec;
  auto store = toy_store();
  store->mutate([](KnowledgeBase& kb) { kb.update_class("Hiss", Importance::ignore, std::nullopt, std::nullopt); });
  Engine engine(store, {}, rec.sink());
  FileReplaySource src{SampleBuffer(concat({silence(0.5), beep(), silence(1.0), hiss(0.3, 5), silence(0.8)}))};
  const auto results = engine.run_auto_recognition(src);
  REQUIRE(results.size() == 2);
  CHECK(results[1].display == Visibility::suppressed);
  const auto shown = rec.of<RecognitionEvent>();
  REQUIRE(shown.size() == 1);
  CHECK(shown[0].result.class_name == "Beep");
}

TEST_CASE("silence yields no results") {
  Engine engine(toy_store());
  FileReplaySource src{SampleBuffer(silence(5.0))};
  CHECK(engine.run_auto_recognition(src).empty());
}

TEST_CASE("KB edits during automatic mode reach the next segment only") {
  auto store = toy_store();
  Engine engine(store);
  const auto first_rev = store->snapshot()->revision();
  const auto x = concat({silence(0.5), beep(), silence(1.0), beep(0.4), silence(0.8)});
  GatedSource src(x, static_cast<std::size_t>(2.0 * kSampleRate));
  std::atomic<bool> busy_seen{false};
  engine.set_hooks({[&](std::uint64_t seq, const TrainedModel& m) {
    if (seq != 0) return;
    CHECK(m.revision == first_rev);
    FileReplaySource other(padded(beep()));
    try {
      engine.run_recording(other);
    } catch (const SessionBusyError&) {
      busy_seen = true;
    }
    store->mutate([](KnowledgeBase& kb) { kb.add_record("Beep", std::nullopt, FeatureVector54::Ones()); });
    CHECK(engine.model_stale());
    src.release();
  }});
  const auto results = engine.run_auto_recognition(src);
  REQUIRE(results.size() == 2);
  CHECK(results[0].model_revision == first_rev);
  CHECK(results[1].model_revision == first_rev + 1);
  CHECK(busy_seen);
  CHECK_FALSE(engine.model_stale());
}

TEST_CASE("ensure_trained only rebuilds on revision or environment change") {
  auto store = toy_store();
  Engine engine(store);
  const auto a = engine.ensure_trained();
  CHECK(engine.ensure_trained() == a);
  const auto b = engine.ensure_trained("kitchen");
  CHECK(b != a);
  store->mutate([](KnowledgeBase& kb) { kb.add_environment("garden"); });
  CHECK(engine.model_stale());
  CHECK(engine.ensure_trained("kitchen") != b);
}

TEST_CASE("delay warnings fire when processing falls behind, at most once per second") {
  Recorder rec;
  PipelineConfig cfg;
  double fake = 0.0;
  cfg.clock = [&fake] { return fake += 0.2; };
  Engine engine(toy_store(), cfg, rec.sink());
  FileReplaySource src{SampleBuffer(silence(4.0))};
  engine.run_auto_recognition(src);
  const auto warnings = rec.of<DelayWarningEvent>();
  CHECK_FALSE(warnings.empty());
  CHECK(warnings.size() <= 5);
  for (std::size_t i = 1; i < warnings.size(); ++i) {
    CHECK(warnings[i].timestamp - warnings[i - 1].timestamp >= 1.0);
  }
  for (const auto& w : warnings) CHECK(w.lag_s > 0.25);
}

TEST_CASE("column decimation follows the configured rate") {
  for (int rate : {23, 12, 8}) {
    Recorder rec;
    PipelineConfig cfg;
    cfg.columns_rate = rate;
    Engine engine(toy_store(), cfg, rec.sink());
    FileReplaySource src{SampleBuffer(silence(2.0))};
    engine.run_auto_recognition(src);
    const std::size_t pairs = ((2 * kSampleRate + kFrameSize - 1) / kFrameSize) / 2;
    const std::size_t stride = rate == 23 ? 1 : rate == 12 ? 2 : 3;
    CHECK(rec.of<SpectrogramEvent>().size() == (pairs + stride - 1) / stride);
    for (const auto& c : rec.of<SpectrogramEvent>()) CHECK(c.column.state == DisplayState::monitor);
  }
}

TEST_CASE("history is bounded") {
  History h(3);
  for (int i = 0; i < 5; ++i) {
    RecognitionResult r;
    r.sequence = static_cast<std::uint64_t>(i);
    h.append(r);
  }
  const auto s = h.snapshot();
  REQUIRE(s.size() == 3);
  CHECK(s.front().sequence == 2);
  CHECK(s.back().sequence == 4);
}

TEST_CASE("pending captures are labeled into the KB or cancelled") {
  auto store = toy_store();
  Engine engine(store);
  FileReplaySource src(padded(hiss(0.3, 4)));
  const auto out = engine.run_recording(src);
  REQUIRE(out.status == RecordingStatus::captured);
  CHECK(engine.pending_ids() == std::vector<std::uint64_t>{out.pending_id});
  const auto before = store->snapshot()->revision();
  const auto id = engine.label_pending(out.pending_id, "Hiss", "lab");
  const auto kb = store->snapshot();
  CHECK(kb->revision() == before + 1);
  CHECK(kb->find_record(id).features == out.capture->features);
  CHECK(kb->find_record(id).environment == "lab");
  REQUIRE(kb->find_record(id).pending_audio);
  CHECK(*kb->find_record(id).pending_audio == out.capture->audio);
  CHECK(engine.pending_ids().empty());
  CHECK_THROWS_AS(engine.label_pending(out.pending_id, "Hiss"), NotFoundError);

  FileReplaySource again(padded(beep()));
  const auto second = engine.run_recording(again);
  engine.cancel_pending(second.pending_id);
  CHECK_THROWS_AS(engine.cancel_pending(second.pending_id), NotFoundError);
}

TEST_CASE("user stop mid-burst keeps a long enough segment") {
  // Stops after 1.0 s of audio, while the 2 s tone is still sounding.
  class StoppingSource : public AudioSource {
   public:
    StoppingSource(std::vector<double> x, std::stop_source& stop) : inner_(SampleBuffer(std::move(x))), stop_(stop) {}
    std::optional<std::vector<double>> next_chunk() override {
      if (++chunks_ * kFrameSize >= static_cast<std::size_t>(1.0 * kSampleRate)) stop_.request_stop();
      return inner_.next_chunk();
    }

   private:
    FileReplaySource inner_;
    std::stop_source& stop_;
    std::size_t chunks_ = 0;
  };
  std::stop_source stop;
  StoppingSource src(concat({silence(0.3), tone(500.0, 0.3, 2.0)}), stop);
  Engine engine(toy_store());
  const auto out = engine.run_recording(src, stop.get_token());
  REQUIRE(out.status == RecordingStatus::captured);
  CHECK(out.capture->segment.end_reason == EndReason::user_stop);
  CHECK(out.capture->segment.duration() >= 0.4);
}
