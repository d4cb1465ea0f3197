#pragma once

// Flat key=value view of the run configuration. Every key has a default, and
// unknown keys are rejected. The echo written next to a run is parsed back by
// the same table.

#include <functional>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "datamanip/corpus.hpp"
#include "datamanip/meta_trainer.hpp"

namespace datamanip {

using KeyValues = std::map<std::string, std::string, std::less<>>;

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;  // throws std::invalid_argument
};

// Bound to the given object; the object must outlive the fields.
std::vector<ConfigField> train_config_fields(TrainConfig& config);
std::vector<ConfigField> corpus_spec_fields(CorpusSpec& spec);

// Applies `values` through `fields`. Unknown keys and unparsable values throw
// std::invalid_argument naming the key.
void apply_key_values(const std::vector<ConfigField>& fields, const KeyValues& values);
KeyValues to_key_values(const std::vector<ConfigField>& fields);

KeyValues train_config_values(const TrainConfig& config);
TrainConfig train_config_from(const KeyValues& values);

// "key = value" lines; '#' starts a comment. Throws on malformed lines or
// repeated keys.
KeyValues parse_key_values(std::istream& in);
std::string format_key_values(const KeyValues& values);

// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace datamanip
