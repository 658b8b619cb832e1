#include "svkit/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace svkit {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

Device parse_device(const std::string& v, const std::string& key) {
  try {
    return device_from_name(v);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a device name, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") seed = parse_u64(value, key);
  else if (key == "jobs") jobs = parse_int(value, key);
  else if (key == "model.n_mel") model.n_mel = parse_int(value, key);
  else if (key == "model.n_frames") model.n_frames = parse_int(value, key);
  else if (key == "model.prosodic_dim") model.prosodic_dim = parse_int(value, key);
  else if (key == "model.mlp_hidden1") model.mlp_hidden[0] = parse_int(value, key);
  else if (key == "model.mlp_hidden2") model.mlp_hidden[1] = parse_int(value, key);
  else if (key == "model.mlp_out") model.mlp_out = parse_int(value, key);
  else if (key == "model.fc6") model.fc6 = parse_int(value, key);
  else if (key == "model.fc7") model.fc7 = parse_int(value, key);
  else if (key == "model.fc8") model.fc8 = parse_int(value, key);
  else if (key == "model.margin") model.margin = parse_double(value, key);
  else if (key == "model.weight_sharing") model.weight_sharing = parse_bool(value, key);
  else if (key == "train.batch_size") train.batch_size = parse_int(value, key);
  else if (key == "train.momentum") train.momentum = parse_double(value, key);
  else if (key == "train.weight_decay") train.weight_decay = parse_double(value, key);
  else if (key == "train.lr_initial") train.lr_initial = parse_double(value, key);
  else if (key == "train.lr_decay_factor") train.lr_decay_factor = parse_double(value, key);
  else if (key == "train.lr_decay_epochs") train.lr_decay_epochs = parse_int(value, key);
  else if (key == "train.bn_decay") train.bn_decay = parse_double(value, key);
  else if (key == "train.dropout") train.dropout = parse_double(value, key);
  else if (key == "train.cnn_epochs") train.cnn_epochs = parse_int(value, key);
  else if (key == "train.mlp_epochs") train.mlp_epochs = parse_int(value, key);
  else if (key == "train.fusion_epochs") train.fusion_epochs = parse_int(value, key);
  else if (key == "train.joint_epochs") train.joint_epochs = parse_int(value, key);
  else if (key == "train.siamese_epochs") train.siamese_epochs = parse_int(value, key);
  else if (key == "train.batches_per_epoch") train.batches_per_epoch = parse_int(value, key);
  else if (key == "train.pairs_per_epoch") train.pairs_per_epoch = parse_int(value, key);
  else if (key == "train.device_a") train.device_a = parse_device(value, key);
  else if (key == "train.device_b") train.device_b = parse_device(value, key);
  else if (key == "protocol.n_subpairs") protocol.n_subpairs = parse_int(value, key);
  else if (key == "protocol.symmetrize") protocol.symmetrize = parse_bool(value, key);
  else if (key == "protocol.trim_sigma") protocol.trim_sigma = parse_double(value, key);
  else if (key == "protocol.max_pairs") protocol.max_pairs = parse_int(value, key);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config '" + path + "' line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::resolve() {
  // the paper's architecture is fixed on the feature side
  if (model.n_mel != kMelBands)
    throw ConfigError("config: model.n_mel must be 40 (the feature pipeline is fixed at 40 bands)");
  if (model.n_frames != kShortFrames)
    throw ConfigError("config: model.n_frames must be 300 (3 s windows at a 10 ms hop)");
  if (model.prosodic_dim != 18)
    throw ConfigError("config: model.prosodic_dim must be 18");
  train.margin = model.margin;
  train.seed = seed;
  model.dropout_rate = train.dropout;
  model.bn_decay = train.bn_decay;
  model.validate();
  train.validate();
  if (protocol.n_subpairs < 1) throw ConfigError("config: protocol.n_subpairs must be positive");
  protocol.seed = seed;
}

std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << seed << "\n";
  os << "jobs = " << jobs << "\n";
  os << "model.n_mel = " << model.n_mel << "\n";
  os << "model.n_frames = " << model.n_frames << "\n";
  os << "model.prosodic_dim = " << model.prosodic_dim << "\n";
  os << "model.mlp_hidden1 = " << model.mlp_hidden[0] << "\n";
  os << "model.mlp_hidden2 = " << model.mlp_hidden[1] << "\n";
  os << "model.mlp_out = " << model.mlp_out << "\n";
  os << "model.fc6 = " << model.fc6 << "\n";
  os << "model.fc7 = " << model.fc7 << "\n";
  os << "model.fc8 = " << model.fc8 << "\n";
  os << "model.margin = " << model.margin << "\n";
  os << "model.weight_sharing = " << (model.weight_sharing ? "true" : "false") << "\n";
  os << "train.batch_size = " << train.batch_size << "\n";
  os << "train.momentum = " << train.momentum << "\n";
  os << "train.weight_decay = " << train.weight_decay << "\n";
  os << "train.lr_initial = " << train.lr_initial << "\n";
  os << "train.lr_decay_factor = " << train.lr_decay_factor << "\n";
  os << "train.lr_decay_epochs = " << train.lr_decay_epochs << "\n";
  os << "train.bn_decay = " << train.bn_decay << "\n";
  os << "train.dropout = " << train.dropout << "\n";
  os << "train.cnn_epochs = " << train.cnn_epochs << "\n";
  os << "train.mlp_epochs = " << train.mlp_epochs << "\n";
  os << "train.fusion_epochs = " << train.fusion_epochs << "\n";
  os << "train.joint_epochs = " << train.joint_epochs << "\n";
  os << "train.siamese_epochs = " << train.siamese_epochs << "\n";
  os << "train.batches_per_epoch = " << train.batches_per_epoch << "\n";
  os << "train.pairs_per_epoch = " << train.pairs_per_epoch << "\n";
  os << "train.device_a = " << device_name(train.device_a) << "\n";
  os << "train.device_b = " << device_name(train.device_b) << "\n";
  os << "protocol.n_subpairs = " << protocol.n_subpairs << "\n";
  os << "protocol.symmetrize = " << (protocol.symmetrize ? "true" : "false") << "\n";
  os << "protocol.trim_sigma = " << protocol.trim_sigma << "\n";
  os << "protocol.max_pairs = " << protocol.max_pairs << "\n";
  return os.str();
}

}  // namespace svkit
