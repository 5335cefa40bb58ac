#include "esr/knowledge_base.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "esr/errors.hpp"

namespace esr {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void require_name(const std::string& name, const char* what) {
  if (name.empty()) throw ValidationError(std::string(what) + " must not be empty");
}

// Manifest reading helpers: every failure names the JSON path.
const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path + ": expected object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path + "." + key + ": missing");
  return *it;
}

std::string get_string(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_string()) throw SchemaError(path + "." + key + ": expected string");
  return v.get<std::string>();
}

std::optional<std::string> get_opt_string(const json& obj, const std::string& key,
                                          const std::string& path) {
  const auto& v = field(obj, key, path);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw SchemaError(path + "." + key + ": expected string or null");
  return v.get<std::string>();
}

std::uint64_t get_uint(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw SchemaError(path + "." + key + ": expected non-negative integer");
  }
  return v.get<std::uint64_t>();
}

const json& get_array(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_array()) throw SchemaError(path + "." + key + ": expected array");
  return v;
}

}  // namespace

std::string_view to_string(Importance i) noexcept {
  switch (i) {
    case Importance::ignore: return "ignore";
    case Importance::usual: return "usual";
    case Importance::important: return "important";
    case Importance::urgent: return "urgent";
  }
  return "usual";
}

Importance importance_from_string(std::string_view s) {
  if (s == "ignore") return Importance::ignore;
  if (s == "usual") return Importance::usual;
  if (s == "important") return Importance::important;
  if (s == "urgent") return Importance::urgent;
  throw ValidationError("unknown importance '" + std::string(s) + "'");
}

bool operator==(const SoundRecord& a, const SoundRecord& b) {
  const bool audio_equal =
      (a.pending_audio == nullptr) == (b.pending_audio == nullptr) &&
      (a.pending_audio == nullptr || *a.pending_audio == *b.pending_audio);
  return a.id == b.id && a.class_name == b.class_name && a.environment == b.environment &&
         a.features == b.features && a.created_at_ms == b.created_at_ms &&
         a.audio_path == b.audio_path && audio_equal;
}

bool operator==(const KnowledgeBase& a, const KnowledgeBase& b) {
  return a.classes_ == b.classes_ && a.records_ == b.records_ &&
         a.environments_ == b.environments_ && a.revision_ == b.revision_ &&
         a.next_id_ == b.next_id_;
}

RecordId KnowledgeBase::add_record(NewRecord rec) {
  require_name(rec.class_name, "class name");
  if (!rec.features.allFinite()) throw ValidationError("features must be finite");
  if (rec.environment && rec.environment->empty()) rec.environment.reset();
  if (!classes_.contains(rec.class_name)) {
    classes_.emplace(rec.class_name, SoundClass{rec.class_name, Importance::usual, false});
  }
  if (rec.environment) environments_.insert(*rec.environment);
  SoundRecord r;
  r.id = next_id_++;
  r.class_name = std::move(rec.class_name);
  r.environment = std::move(rec.environment);
  r.features = rec.features;
  r.created_at_ms = now_ms();
  r.audio_path = std::move(rec.audio_path);
  r.pending_audio = std::move(rec.audio);
  records_.push_back(std::move(r));
  bump();
  return records_.back().id;
}

RecordId KnowledgeBase::add_record(std::string class_name, std::optional<std::string> environment,
                                   const FeatureVector54& features,
                                   std::shared_ptr<const SampleBuffer> audio) {
  return add_record(NewRecord{std::move(class_name), std::move(environment), features,
                              std::move(audio), std::nullopt});
}

void KnowledgeBase::create_class(const std::string& name, Importance importance) {
  require_name(name, "class name");
  if (classes_.contains(name)) throw ConflictError("class '" + name + "' already exists");
  classes_.emplace(name, SoundClass{name, importance, false});
  bump();
}

void KnowledgeBase::update_class(const std::string& name, std::optional<Importance> importance,
                                 std::optional<bool> excluded,
                                 std::optional<std::string> new_name) {
  auto it = classes_.find(name);
  if (it == classes_.end()) throw NotFoundError("unknown class '" + name + "'");
  if (new_name && *new_name != name) {
    require_name(*new_name, "class name");
    if (classes_.contains(*new_name)) {
      throw ConflictError("class '" + *new_name + "' already exists");
    }
  }
  SoundClass updated = it->second;
  if (importance) updated.importance = *importance;
  if (excluded) updated.excluded = *excluded;
  if (new_name && *new_name != name) {
    updated.name = *new_name;
    classes_.erase(it);
    for (auto& r : records_) {
      if (r.class_name == name) r.class_name = *new_name;
    }
    classes_.emplace(updated.name, updated);
  } else {
    it->second = updated;
  }
  bump();
}

void KnowledgeBase::delete_class(const std::string& name) {
  if (classes_.erase(name) == 0) throw NotFoundError("unknown class '" + name + "'");
  std::erase_if(records_, [&](const SoundRecord& r) { return r.class_name == name; });
  bump();
}

void KnowledgeBase::delete_record(RecordId id) {
  const auto n = std::erase_if(records_, [&](const SoundRecord& r) { return r.id == id; });
  if (n == 0) throw NotFoundError("unknown record " + std::to_string(id));
  bump();
}

void KnowledgeBase::add_environment(const std::string& label) {
  require_name(label, "environment");
  if (!environments_.insert(label).second) {
    throw ConflictError("environment '" + label + "' already exists");
  }
  bump();
}

void KnowledgeBase::rename_environment(const std::string& from, const std::string& to) {
  require_name(to, "environment");
  if (!environments_.contains(from)) throw NotFoundError("unknown environment '" + from + "'");
  if (from == to) return;
  if (environments_.contains(to)) throw ConflictError("environment '" + to + "' already exists");
  environments_.erase(from);
  environments_.insert(to);
  for (auto& r : records_) {
    if (r.environment == from) r.environment = to;
  }
  bump();
}

void KnowledgeBase::delete_environment(const std::string& label) {
  if (environments_.erase(label) == 0) {
    throw NotFoundError("unknown environment '" + label + "'");
  }
  for (auto& r : records_) {
    if (r.environment == label) r.environment.reset();
  }
  bump();
}

const SoundClass& KnowledgeBase::find_class(const std::string& name) const {
  auto it = classes_.find(name);
  if (it == classes_.end()) throw NotFoundError("unknown class '" + name + "'");
  return it->second;
}

const SoundRecord& KnowledgeBase::find_record(RecordId id) const {
  auto it = std::find_if(records_.begin(), records_.end(),
                         [&](const SoundRecord& r) { return r.id == id; });
  if (it == records_.end()) throw NotFoundError("unknown record " + std::to_string(id));
  return *it;
}

SoundRecord& KnowledgeBase::find_record_mut(RecordId id) {
  return const_cast<SoundRecord&>(std::as_const(*this).find_record(id));
}

std::size_t KnowledgeBase::record_count(const std::string& class_name) const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(),
      [&](const SoundRecord& r) { return r.class_name == class_name; }));
}

std::map<std::string, std::vector<RecordId>> KnowledgeBase::list_by_environment() const {
  std::map<std::string, std::vector<RecordId>> groups;
  for (const auto& r : records_) {
    groups[r.environment ? *r.environment : std::string(kNoEnvironment)].push_back(r.id);
  }
  return groups;
}

void KnowledgeBase::check_integrity() const {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!classes_.contains(records_[i].class_name)) {
      throw SchemaError("records[" + std::to_string(i) + "].class: unknown class '" +
                        records_[i].class_name + "'");
    }
  }
}

void KnowledgeBase::mark_audio_saved(RecordId id, std::string audio_path) {
  auto& r = find_record_mut(id);
  r.audio_path = std::move(audio_path);
  r.pending_audio.reset();
}

std::string render_manifest(const KnowledgeBase& kb) {
  json doc;
  doc["format"] = "esr-kb";
  doc["version"] = 1;
  doc["revision"] = kb.revision();
  doc["next_id"] = kb.next_id();
  doc["environments"] = json::array();
  for (const auto& e : kb.environments()) doc["environments"].push_back(e);
  doc["classes"] = json::array();
  for (const auto& [name, c] : kb.classes()) {
    doc["classes"].push_back(
        {{"name", name}, {"importance", to_string(c.importance)}, {"excluded", c.excluded}});
  }
  doc["records"] = json::array();
  for (const auto& r : kb.records()) {
    json features = json::array();
    for (int i = 0; i < kFeatureCount; ++i) features.push_back(r.features(i));
    doc["records"].push_back({{"id", r.id},
                              {"class", r.class_name},
                              {"environment", r.environment ? json(*r.environment) : json()},
                              {"created_at_ms", r.created_at_ms},
                              {"audio_path", r.audio_path ? json(*r.audio_path) : json()},
                              {"features", std::move(features)}});
  }
  return doc.dump(1);
}

KnowledgeBase parse_manifest(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("$: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("$: expected object");
  if (get_string(doc, "format", "$") != "esr-kb") throw SchemaError("$.format: not esr-kb");
  if (get_uint(doc, "version", "$") != 1) throw SchemaError("$.version: unsupported");

  KnowledgeBase kb;
  kb.revision_ = get_uint(doc, "revision", "$");
  kb.next_id_ = std::max<RecordId>(1, get_uint(doc, "next_id", "$"));
  const auto& envs = get_array(doc, "environments", "$");
  for (std::size_t i = 0; i < envs.size(); ++i) {
    if (!envs[i].is_string()) {
      throw SchemaError("$.environments[" + std::to_string(i) + "]: expected string");
    }
    kb.environments_.insert(envs[i].get<std::string>());
  }
  const auto& classes = get_array(doc, "classes", "$");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string path = "$.classes[" + std::to_string(i) + "]";
    SoundClass c;
    c.name = get_string(classes[i], "name", path);
    if (c.name.empty()) throw SchemaError(path + ".name: empty");
    try {
      c.importance = importance_from_string(get_string(classes[i], "importance", path));
    } catch (const ValidationError& e) {
      throw SchemaError(path + ".importance: " + e.what());
    }
    const auto& ex = field(classes[i], "excluded", path);
    if (!ex.is_boolean()) throw SchemaError(path + ".excluded: expected boolean");
    c.excluded = ex.get<bool>();
    if (!kb.classes_.emplace(c.name, c).second) throw SchemaError(path + ".name: duplicate");
  }
  const auto& records = get_array(doc, "records", "$");
  std::set<RecordId> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string path = "$.records[" + std::to_string(i) + "]";
    SoundRecord r;
    r.id = get_uint(records[i], "id", path);
    if (!seen.insert(r.id).second) throw SchemaError(path + ".id: duplicate");
    r.class_name = get_string(records[i], "class", path);
    if (!kb.classes_.contains(r.class_name)) throw SchemaError(path + ".class: unknown class");
    r.environment = get_opt_string(records[i], "environment", path);
    const auto& created = field(records[i], "created_at_ms", path);
    if (!created.is_number_integer()) throw SchemaError(path + ".created_at_ms: expected integer");
    r.created_at_ms = created.get<std::int64_t>();
    r.audio_path = get_opt_string(records[i], "audio_path", path);
    const auto& features = get_array(records[i], "features", path);
    if (features.size() != static_cast<std::size_t>(kFeatureCount)) {
      throw SchemaError(path + ".features: expected 54 values, got " +
                        std::to_string(features.size()));
    }
    for (int k = 0; k < kFeatureCount; ++k) {
      const auto& v = features[static_cast<std::size_t>(k)];
      if (!v.is_number()) {
        throw SchemaError(path + ".features[" + std::to_string(k) + "]: expected number");
      }
      r.features(k) = v.get<double>();
    }
    kb.next_id_ = std::max(kb.next_id_, r.id + 1);
    kb.records_.push_back(std::move(r));
  }
  return kb;
}

void save(KnowledgeBase& kb, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : std::vector<SoundRecord>(kb.records())) {
    if (!r.pending_audio) continue;
    const std::string rel = "audio/" + std::to_string(r.id) + ".wav";
    std::filesystem::create_directories(dir / "audio");
    write_wav_file(dir / rel, *r.pending_audio);
    kb.mark_audio_saved(r.id, rel);
  }
  const auto tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DomainError("cannot write " + tmp.string());
    out << render_manifest(kb) << '\n';
  }
  std::filesystem::rename(tmp, dir / kManifestName);
}

KnowledgeBase load(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw NotFoundError("no knowledge base at " + (dir / kManifestName).string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::optional<SampleBuffer> record_audio(const SoundRecord& rec,
                                         const std::filesystem::path& dir) {
  if (rec.pending_audio) return *rec.pending_audio;
  if (rec.audio_path) return read_wav_file(dir / *rec.audio_path);
  return std::nullopt;
}

bool environment_matches(const SoundRecord& rec, const std::optional<std::string>& env) {
  return !env || !rec.environment || *rec.environment == *env;
}

KnowledgeStore::KnowledgeStore(KnowledgeBase kb, std::optional<std::filesystem::path> dir)
    : current_(std::make_shared<const KnowledgeBase>(std::move(kb))), dir_(std::move(dir)) {}

std::shared_ptr<const KnowledgeBase> KnowledgeStore::snapshot() const {
  std::lock_guard lock(read_mutex_);
  return current_;
}

void KnowledgeStore::publish(std::shared_ptr<KnowledgeBase> next) {
  next->check_integrity();
  if (dir_) save(*next, *dir_);
  std::lock_guard lock(read_mutex_);
  current_ = std::move(next);
}

}  // namespace esr
