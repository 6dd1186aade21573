#include "modelctl/adapter.hpp"

#include <map>
#include <mutex>
#include <numeric>

#include "modelctl/errors.hpp"
#include "modelctl/toy_model.hpp"

namespace modelctl {

std::string_view to_string(TaskTag task) noexcept {
  return task == TaskTag::kTranscribe ? "tc" : "tl";
}

TaskTag parse_task(std::string_view text) {
  if (text == "tc") return TaskTag::kTranscribe;
  if (text == "tl") return TaskTag::kTranslate;
  throw InvalidArgument("unknown task tag '" + std::string(text) + "' (expected tc or tl)");
}

double DecodeResult::total_nll() const {
  return std::accumulate(step_nll.begin(), step_nll.end(), 0.0);
}

void ModelAdapter::check_audio(const Waveform& audio) const {
  if (audio.sample_rate != sample_rate()) {
    throw SampleRateMismatch("adapter expects " + std::to_string(sample_rate()) +
                             " Hz, got " + std::to_string(audio.sample_rate) + " Hz");
  }
  if (audio.frames() > max_frames()) {
    throw AudioTooLong("audio has " + std::to_string(audio.frames()) + " frames, limit is " +
                       std::to_string(max_frames()));
  }
  audio.validate();
}

void ModelAdapter::check_tokens(const TokenSequence& target) const {
  for (TokenId t : target.tokens) {
    if (t < 0 || t >= vocab_size()) {
      throw OutOfVocabulary("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(vocab_size()));
    }
  }
}

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, AdapterFactory> factories;

  Registry() {
    factories["toy"] = [](const std::filesystem::path& checkpoint) {
      return std::unique_ptr<ModelAdapter>(std::make_unique<ToyAdapter>(load_toy_model(checkpoint)));
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_adapter(const std::string& id, AdapterFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[id] = std::move(factory);
}

std::unique_ptr<ModelAdapter> make_adapter(const std::string& id,
                                           const std::filesystem::path& checkpoint) {
  auto& r = registry();
  AdapterFactory factory;
  {
    std::lock_guard lock(r.mutex);
    const auto it = r.factories.find(id);
    if (it == r.factories.end()) throw InvalidArgument("unknown adapter id '" + id + "'");
    factory = it->second;
  }
  return factory(checkpoint);
}

std::vector<std::string> registered_adapters() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> ids;
  for (const auto& [id, _] : r.factories) ids.push_back(id);
  return ids;
}

}  // namespace modelctl
