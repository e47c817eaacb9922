#pragma once
// JSON views of the configuration structs. Reading is strict: unknown keys and
// wrongly typed values raise ConfigError naming the field; missing keys keep
// the struct's current value, so a partial file overrides defaults.

#include "json.hpp"

#include "hlan/corpus.hpp"
#include "hlan/embeddings.hpp"
#include "hlan/model.hpp"
#include "hlan/trainer.hpp"

namespace hlan {

using json = nlohmann::json;

json to_json(const ModelConfig& c);
json to_json(const SynthConfig& c);
json to_json(const CbowConfig& c);
json to_json(const TrainConfig& c);

void update_from_json(ModelConfig& c, const json& j, const std::string& where = "model");
void update_from_json(SynthConfig& c, const json& j, const std::string& where = "synth");
void update_from_json(CbowConfig& c, const json& j, const std::string& where = "embed");
void update_from_json(TrainConfig& c, const json& j, const std::string& where = "train");

// Reads `path` (or throws ConfigError if it is missing or malformed).
json read_json_file(const std::filesystem::path& path);

namespace detail {

// Walks an object, dispatching each key to a setter; unknown keys throw.
class FieldReader {
 public:
  FieldReader(const json& j, std::string where);

  template <class T>
  FieldReader& field(const char* key, T& out) {
    seen_.push_back(key);
    if (auto it = j_.find(key); it != j_.end()) {
      bool ok;
      if constexpr (std::is_same_v<T, bool>) ok = it->is_boolean();
      else if constexpr (std::is_unsigned_v<T>) ok = it->is_number_unsigned();
      else if constexpr (std::is_arithmetic_v<T>) ok = it->is_number();
      else if constexpr (std::is_same_v<T, std::string>) ok = it->is_string();
      else ok = true;
      if (!ok) throw ConfigError(where_ + "." + key + ": expected " + type_name<T>() + ", got " + it->dump());
      try {
        out = it->template get<T>();
      } catch (const json::exception&) {
        throw ConfigError(where_ + "." + key + ": expected " + type_name<T>() + ", got " + it->dump());
      }
    }
    return *this;
  }
  // Custom conversion; `convert` may throw ConfigError.
  template <class F>
  FieldReader& custom(const char* key, F&& convert) {
    seen_.push_back(key);
    if (auto it = j_.find(key); it != j_.end()) convert(*it, where_ + "." + key);
    return *this;
  }
  void finish() const;  // unknown keys -> ConfigError

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_arithmetic_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a value of the right type";
  }
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace detail

}  // namespace hlan
