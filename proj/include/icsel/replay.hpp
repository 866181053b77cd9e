#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "icsel/backend.hpp"

namespace icsel {

// Canonical request identities. A request hashes the same on the machine that
// recorded it and the machine that replays it, so the pair (kind, model,
// text, candidates) is serialized with explicit separators before hashing.
inline uint64_t request_hash(const std::string& kind, const std::string& model,
                             const std::string& text,
                             const std::vector<std::string>& candidates) {
  std::string buf = kind;
  buf += '\x1f';
  buf += model;
  buf += '\x1f';
  buf += text;
  for (const auto& c : candidates) {
    buf += '\x1e';
    buf += c;
  }
  return fnv1a(buf);
}

// Append-only JSONL cache of backend responses, keyed by request hash.
// Serves two purposes: re-running an experiment without paying for remote
// calls, and pinning a pipeline's inputs for byte-reproducible reruns.
class ReplayStore {
 public:
  explicit ReplayStore(std::string path) : path_(std::move(path)) {
    namespace fs = std::filesystem;
    if (fs::exists(path_)) {
      for_each_jsonl(path_, [&](const json& j, size_t lineno) {
        uint64_t h = std::stoull(j.at("hash").get<std::string>(), nullptr, 16);
        auto values = j.at("values").get<std::vector<double>>();
        auto it = entries_.find(h);
        if (it != entries_.end() && it->second != values)
          throw LoadError(path_ + ":" + std::to_string(lineno) +
                          ": conflicting entries for hash " + hash_hex(h));
        entries_.emplace(h, std::move(values));
      });
    } else {
      if (fs::path(path_).has_parent_path())
        fs::create_directories(fs::path(path_).parent_path());
    }
    out_.open(path_, std::ios::app);
    if (!out_) throw Error("cannot open replay store for append: " + path_);
  }

  const std::string& path() const { return path_; }
  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
  }

  std::optional<std::vector<double>> lookup(uint64_t h) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(h);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void append(uint64_t h, const std::string& kind,
              const std::vector<double>& values) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(h);
    if (it != entries_.end()) {
      if (it->second != values)
        throw Error("replay store: conflicting values for hash " + hash_hex(h));
      return;
    }
    entries_.emplace(h, values);
    out_ << json{{"hash", hash_hex(h)}, {"kind", kind}, {"values", values}}.dump()
         << "\n";
    out_.flush();
    if (!out_) throw Error("replay store: write failed: " + path_);
  }

 private:
  std::string path_;
  mutable std::mutex mu_;
  std::unordered_map<uint64_t, std::vector<double>> entries_;
  std::ofstream out_;
};

// Serves recorded responses only; any unseen request is a hard error naming
// the hash, because silently falling through to a live model would invalidate
// the reproducibility claim.
class ReplayBackend : public Backend {
 public:
  ReplayBackend(std::shared_ptr<ReplayStore> store, std::string model_id,
                int context_window_tokens = 1 << 20)
      : store_(std::move(store)),
        model_id_(std::move(model_id)),
        context_window_(context_window_tokens) {}

  std::string id() const override { return "replay:" + model_id_; }

  LabelScores score_labels(const RenderedPrompt& prompt) override {
    uint64_t h =
        request_hash("scores", model_id_, prompt.text, prompt.label_candidates);
    auto values = store_->lookup(h);
    if (!values.has_value()) miss("scores", h);
    return LabelScores{std::move(*values)};
  }

  double perplexity(const std::string& text) override {
    uint64_t h = request_hash("ppl", model_id_, text, {});
    auto values = store_->lookup(h);
    if (!values.has_value() || values->size() != 1) miss("ppl", h);
    return values->front();
  }

  int count_tokens(const std::string& text) override {
    uint64_t h = request_hash("tokens", model_id_, text, {});
    auto values = store_->lookup(h);
    if (!values.has_value() || values->size() != 1) miss("tokens", h);
    return static_cast<int>(values->front());
  }

  int context_window() const override { return context_window_; }

 private:
  [[noreturn]] void miss(const std::string& kind, uint64_t h) const {
    throw CacheMissError("replay store " + store_->path() + " has no " + kind +
                         " entry for request " + hash_hex(h));
  }

  std::shared_ptr<ReplayStore> store_;
  std::string model_id_;
  int context_window_;
};

// Write-through wrapper: serves from the store when possible, otherwise asks
// the wrapped backend and records the answer. inner_calls() counts actual
// fall-throughs, which is how tests prove a replayed run never touched the
// model.
class RecordingBackend : public Backend {
 public:
  RecordingBackend(std::shared_ptr<ReplayStore> store, Backend& inner)
      : store_(std::move(store)), inner_(inner) {}

  std::string id() const override { return inner_.id(); }
  long inner_calls() const { return inner_calls_.load(); }

  LabelScores score_labels(const RenderedPrompt& prompt) override {
    uint64_t h =
        request_hash("scores", inner_.id(), prompt.text, prompt.label_candidates);
    if (auto hit = store_->lookup(h)) return LabelScores{std::move(*hit)};
    inner_calls_.fetch_add(1);
    LabelScores scores = inner_.score_labels(prompt);
    store_->append(h, "scores", scores.scores);
    return scores;
  }

  double perplexity(const std::string& text) override {
    uint64_t h = request_hash("ppl", inner_.id(), text, {});
    if (auto hit = store_->lookup(h)) return hit->front();
    inner_calls_.fetch_add(1);
    double ppl = inner_.perplexity(text);
    store_->append(h, "ppl", {ppl});
    return ppl;
  }

  int count_tokens(const std::string& text) override {
    uint64_t h = request_hash("tokens", inner_.id(), text, {});
    if (auto hit = store_->lookup(h)) return static_cast<int>(hit->front());
    inner_calls_.fetch_add(1);
    int n = inner_.count_tokens(text);
    store_->append(h, "tokens", {static_cast<double>(n)});
    return n;
  }

  int context_window() const override { return inner_.context_window(); }

 private:
  std::shared_ptr<ReplayStore> store_;
  Backend& inner_;
  std::atomic<long> inner_calls_{0};
};

}  // namespace icsel
