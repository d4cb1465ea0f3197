#include "datamanip/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace datamanip {

namespace {

using json = nlohmann::json;

std::vector<NamedTensor> named_tensors(const ParamSet& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({params.name(i), params[i].value()});
  }
  return out;
}

// Column-major data, the same order as ParamSet::coordinate.
json matrix_json(const ad::Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

ad::Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw std::runtime_error("checkpoint: tensor data does not match its shape");
  }
  ad::Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json tensors_json(const std::vector<NamedTensor>& tensors) {
  json arr = json::array();
  for (const auto& t : tensors) {
    json j = matrix_json(t.value);
    j["name"] = t.name;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<NamedTensor> tensors_from(const json& arr) {
  std::vector<NamedTensor> out;
  for (const auto& j : arr) out.push_back({j.at("name").get<std::string>(), matrix_from(j)});
  return out;
}

json matrices_json(const std::vector<ad::Matrix>& ms) {
  json arr = json::array();
  for (const auto& m : ms) arr.push_back(matrix_json(m));
  return arr;
}

std::vector<ad::Matrix> matrices_from(const json& arr) {
  std::vector<ad::Matrix> out;
  for (const auto& j : arr) out.push_back(matrix_from(j));
  return out;
}

}  // namespace

Checkpoint make_checkpoint(const Trainer& trainer, const Vocabulary* vocab) {
  Checkpoint c;
  c.config = train_config_values(trainer.config());
  if (vocab) c.vocabulary = vocab->tokens();
  c.state = trainer.state();
  c.theta = named_tensors(trainer.theta());
  if (trainer.net()) c.phi = named_tensors(trainer.net()->params());
  return c;
}

void write_checkpoint(const Checkpoint& c, std::ostream& out) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = c.config;
  j["vocabulary"] = c.vocabulary;
  j["state"] = {{"iteration", c.state.iteration},
                {"initial_valid_nll", c.state.initial_valid_nll},
                {"divergence_run", c.state.divergence_run},
                {"meta_adam",
                 {{"t", c.state.meta_adam.t},
                  {"m", matrices_json(c.state.meta_adam.m)},
                  {"v", matrices_json(c.state.meta_adam.v)}}}};
  j["theta"] = tensors_json(c.theta);
  j["phi"] = tensors_json(c.phi);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw std::runtime_error("checkpoint: not a checkpoint file");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw std::runtime_error("checkpoint: unsupported version " +
                               std::to_string(j.at("version").get<int>()));
    }
    Checkpoint c;
    for (const auto& [k, v] : j.at("config").items()) c.config[k] = v.get<std::string>();
    c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    const auto& s = j.at("state");
    c.state.iteration = s.at("iteration").get<int>();
    c.state.initial_valid_nll = s.at("initial_valid_nll").get<double>();
    c.state.divergence_run = s.at("divergence_run").get<int>();
    c.state.meta_adam.t = s.at("meta_adam").at("t").get<long>();
    c.state.meta_adam.m = matrices_from(s.at("meta_adam").at("m"));
    c.state.meta_adam.v = matrices_from(s.at("meta_adam").at("v"));
    c.theta = tensors_from(j.at("theta"));
    c.phi = tensors_from(j.at("phi"));
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(checkpoint, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_checkpoint(in);
}

void assign_tensors(ParamSet& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                             " tensors, found " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const auto& cur = params[i].value();
    if (t.name != params.name(i) || t.value.rows() != cur.rows() || t.value.cols() != cur.cols()) {
      throw std::runtime_error("checkpoint: tensor " + t.name + " does not match " +
                               params.name(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params.set_value(i, tensors[i].value);
}

std::unique_ptr<Trainer> restore_trainer(const Corpus& corpus, const Checkpoint& checkpoint,
                                         int vocab_size) {
  auto trainer = std::make_unique<Trainer>(corpus, checkpoint.train_config(), vocab_size, false);
  assign_tensors(trainer->theta(), checkpoint.theta);
  if (trainer->net()) {
    assign_tensors(trainer->net()->params(), checkpoint.phi);
  } else if (!checkpoint.phi.empty()) {
    throw std::runtime_error("checkpoint: phi tensors present in vanilla mode");
  }
  trainer->restore(checkpoint.state);
  return trainer;
}

BuiltModel restore_model(const Checkpoint& checkpoint, int vocab_size) {
  const TrainConfig cfg = checkpoint.train_config();
  BuiltModel built = build_model(cfg.arch, cfg.model, vocab_size, derive_seed(cfg.seed, "model"));
  assign_tensors(built.params, checkpoint.theta);
  return built;
}

}  // namespace datamanip
