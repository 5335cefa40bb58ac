#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "esr/audio_io.hpp"
#include "esr/features.hpp"

namespace esr {

enum class Importance { ignore, usual, important, urgent };

std::string_view to_string(Importance i) noexcept;
/// Throws ValidationError on an unknown name.
Importance importance_from_string(std::string_view s);

inline constexpr std::string_view kNoEnvironment = "(none)";
inline constexpr std::size_t kMinTrainingInstances = 2;

struct SoundClass {
  std::string name;
  Importance importance = Importance::usual;
  bool excluded = false;

  friend bool operator==(const SoundClass&, const SoundClass&) = default;
};

using RecordId = std::uint64_t;

struct SoundRecord {
  RecordId id = 0;
  std::string class_name;
  std::optional<std::string> environment;
  FeatureVector54 features = FeatureVector54::Zero();
  std::int64_t created_at_ms = 0;
  /// Path of the stored WAV relative to the KB directory, once persisted.
  std::optional<std::string> audio_path;
  /// Audio captured this session and not yet written by save().
  std::shared_ptr<const SampleBuffer> pending_audio;

  friend bool operator==(const SoundRecord& a, const SoundRecord& b);
};

struct NewRecord {
  std::string class_name;
  std::optional<std::string> environment;
  FeatureVector54 features = FeatureVector54::Zero();
  std::shared_ptr<const SampleBuffer> audio;
  std::optional<std::string> audio_path;
};

/// The user's personalized sound collection. Plain value; see KnowledgeStore
/// for the shared, revisioned wrapper.
class KnowledgeBase {
 public:
  RecordId add_record(NewRecord rec);
  RecordId add_record(std::string class_name, std::optional<std::string> environment,
                      const FeatureVector54& features,
                      std::shared_ptr<const SampleBuffer> audio = nullptr);

  /// Creates an empty class; ConflictError if it exists.
  void create_class(const std::string& name, Importance importance = Importance::usual);
  void update_class(const std::string& name, std::optional<Importance> importance,
                    std::optional<bool> excluded, std::optional<std::string> new_name);
  void delete_class(const std::string& name);
  void delete_record(RecordId id);

  void add_environment(const std::string& label);
  /// Renames the label everywhere it is used.
  void rename_environment(const std::string& from, const std::string& to);
  /// Removes the label; records that carried it fall back to no environment.
  void delete_environment(const std::string& label);

  const std::map<std::string, SoundClass>& classes() const noexcept { return classes_; }
  const std::vector<SoundRecord>& records() const noexcept { return records_; }
  const std::set<std::string>& environments() const noexcept { return environments_; }
  std::uint64_t revision() const noexcept { return revision_; }
  RecordId next_id() const noexcept { return next_id_; }

  const SoundClass& find_class(const std::string& name) const;
  const SoundRecord& find_record(RecordId id) const;
  std::size_t record_count(const std::string& class_name) const;

  /// Groups record ids by environment label; unlabeled records go under "(none)".
  std::map<std::string, std::vector<RecordId>> list_by_environment() const;

  /// Throws SchemaError if any record references a missing class.
  void check_integrity() const;

  /// Drops the in-memory payload of a record now stored at `audio_path`.
  void mark_audio_saved(RecordId id, std::string audio_path);

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&);

 private:
  friend KnowledgeBase parse_manifest(std::string_view text);

  void bump() noexcept { ++revision_; }
  SoundRecord& find_record_mut(RecordId id);

  std::map<std::string, SoundClass> classes_;
  std::vector<SoundRecord> records_;
  std::set<std::string> environments_;
  std::uint64_t revision_ = 0;
  RecordId next_id_ = 1;
};

inline constexpr std::string_view kManifestName = "kb.json";

/// Writes <dir>/kb.json and <dir>/audio/<id>.wav for pending audio.
void save(KnowledgeBase& kb, const std::filesystem::path& dir);
KnowledgeBase load(const std::filesystem::path& dir);
/// Throws SchemaError naming the offending field path.
KnowledgeBase parse_manifest(std::string_view text);
std::string render_manifest(const KnowledgeBase& kb);

/// Audio for a record, from memory or from <dir>/<audio_path>.
std::optional<SampleBuffer> record_audio(const SoundRecord& rec,
                                         const std::filesystem::path& dir);

/// Records visible under an environment filter: that label plus unlabeled ones.
bool environment_matches(const SoundRecord& rec, const std::optional<std::string>& env);

/// Single-writer, multi-reader holder handing out immutable snapshots.
class KnowledgeStore {
 public:
  explicit KnowledgeStore(KnowledgeBase kb = {}, std::optional<std::filesystem::path> dir = {});

  std::shared_ptr<const KnowledgeBase> snapshot() const;

  /// Applies fn to a private copy, publishes it, and persists when a directory is set.
  template <typename Fn>
  auto mutate(Fn&& fn) {
    std::lock_guard lock(write_mutex_);
    auto next = std::make_shared<KnowledgeBase>(*snapshot());
    if constexpr (std::is_void_v<decltype(fn(*next))>) {
      fn(*next);
      publish(std::move(next));
    } else {
      auto result = fn(*next);
      publish(std::move(next));
      return result;
    }
  }

  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

 private:
  void publish(std::shared_ptr<KnowledgeBase> next);

  mutable std::mutex read_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const KnowledgeBase> current_;
  std::optional<std::filesystem::path> dir_;
};

}  // namespace esr
