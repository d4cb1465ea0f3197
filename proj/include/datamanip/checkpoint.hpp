#pragma once

// Self-describing JSON checkpoints: the resolved config, the vocabulary, the
// trainer counters and optimizer moments, and every theta and phi tensor by
// name.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "datamanip/config.hpp"
#include "datamanip/meta_trainer.hpp"

namespace datamanip {

inline constexpr const char* kCheckpointFormat = "datamanip-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Matrix value;
};

struct Checkpoint {
  KeyValues config;
  std::vector<std::string> vocabulary;  // empty when unknown
  TrainerState state;
  std::vector<NamedTensor> theta;
  std::vector<NamedTensor> phi;  // empty in vanilla mode

  TrainConfig train_config() const { return train_config_from(config); }
};

Checkpoint make_checkpoint(const Trainer& trainer, const Vocabulary* vocab = nullptr);

// Throws std::runtime_error on malformed input, a wrong format tag or an
// unsupported version.
void write_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors into `params`; names, order and shapes must match exactly.
void assign_tensors(ParamSet& params, const std::vector<NamedTensor>& tensors);

// Rebuilds a trainer at the saved iteration. The corpus must be the one the
// checkpoint was trained on; per-instance statistics start empty.
std::unique_ptr<Trainer> restore_trainer(const Corpus& corpus, const Checkpoint& checkpoint,
                                         int vocab_size);

// Only the dialogue model, for decoding and evaluation.
BuiltModel restore_model(const Checkpoint& checkpoint, int vocab_size);

}  // namespace datamanip
