#include "brainssl/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d{
      {"data.manifest", ""},
      {"augment.pipeline", "auto"},
      {"model.architecture", "resnet18_3d"},
      {"model.input_shape", "150,192,192"},
      {"model.widths", "64,128,256,512"},
      {"model.projection_dim", "64"},
      {"model.projection_hidden", "512"},
      {"model.temperature", "0.5"},
      {"model.patch", "25,16,16"},
      {"model.embed_dim", "192"},
      {"model.depth", "12"},
      {"model.heads", "3"},
      {"model.mlp_ratio", "4"},
      {"model.decoder_embed_dim", "512"},
      {"model.decoder_depth", "8"},
      {"model.decoder_heads", "16"},
      {"model.mask_ratio", "0.75"},
      {"model.per_voxel_loss", "false"},
      {"train.epochs", ""},
      {"train.batch_size", ""},
      {"train.seed", ""},
      {"train.lr", "0.001"},
      {"train.weight_decay", "0.0001"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.warmup_epochs", "0"},
      {"train.schedule", "cosine"},
      {"train.devices", "1"},
      {"train.precision", "float32"},
      {"train.save_checkpoints", "true"},
      {"eval.task", "synthetic-asymmetry"},
      {"eval.seeds", "0,1,2,3,4"},
      {"eval.probe_epochs", "100"},
      {"eval.probe_batch_size", "32"},
      {"eval.probe_lr", "0.01"},
      {"eval.probe_weight_decay", "0.0001"},
      {"eval.finetune_epochs", "100"},
      {"eval.finetune_batch_size", "16"},
      {"eval.finetune_lr", "0.0001"},
      {"eval.finetune_weight_decay", "0.0001"},
      {"eval.supervised_epochs", "300"},
      {"eval.supervised_batch_size", "16"},
      {"eval.supervised_lr", "0.001"},
      {"eval.supervised_weight_decay", "0.0001"},
      {"output.dir", ""},
  };
  return d;
}

bool is_transform_key(const std::string& key) {
  const std::string prefix = "augment.transform_";
  if (key.rfind(prefix, 0) != 0 || key.size() == prefix.size()) return false;
  return key.find_first_not_of("0123456789", prefix.size()) == std::string::npos;
}

bool known_key(const std::string& key) { return defaults().count(key) > 0 || is_transform_key(key); }

std::int64_t as_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

double as_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  boost::split(parts, v, boost::is_any_of(","));
  for (auto& p : parts) boost::trim(p);
  return parts;
}

std::string join_shape(const Shape3& s) {
  return std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]);
}

std::string num(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

}  // namespace

Shape3 parse_shape(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() == 1) {
    const auto n = as_int(key, parts[0]);
    return {n, n, n};
  }
  if (parts.size() != 3) throw ConfigError(key + ": expected one or three integers, got '" + value + "'");
  return {as_int(key, parts[0]), as_int(key, parts[1]), as_int(key, parts[2])};
}

RunConfig RunConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  c.base_dir_ = base_dir;
  c.values_ = defaults();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      if (!known_key(full)) throw ConfigError("unknown config key '" + full + "'");
      c.values_[full] = boost::trim_copy(node.data());
    }
  }
  // Decode every typed field once so bad values surface at load time.
  (void)c.train_config(Objective::kSupervised);
  (void)c.eval_config();
  (void)c.task();
  (void)c.seeds();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string RunConfig::canonical() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::require(std::span<const std::string> keys) const {
  for (const auto& k : keys) {
    const auto it = values_.find(k);
    if (it == values_.end() || it->second.empty()) throw ConfigError("missing required config key '" + k + "'");
  }
}

const std::vector<std::string>& RunConfig::pretrain_required() {
  static const std::vector<std::string> keys{"data.manifest", "train.epochs", "train.batch_size", "train.seed",
                                             "output.dir"};
  return keys;
}

TrainConfig RunConfig::train_config(Objective objective) const {
  TrainConfig t;
  t.objective = objective;
  apply_model_entries(values_, t);
  auto opt_int = [&](const std::string& key, int fallback) {
    const auto& v = get(key);
    return v.empty() ? fallback : static_cast<int>(as_int(key, v));
  };
  t.epochs = opt_int("train.epochs", t.epochs);
  t.batch_size = opt_int("train.batch_size", t.batch_size);
  if (!get("train.seed").empty()) t.seed = static_cast<std::uint64_t>(as_int("train.seed", get("train.seed")));
  t.optim.lr = as_double("train.lr", get("train.lr"));
  t.optim.weight_decay = as_double("train.weight_decay", get("train.weight_decay"));
  t.optim.beta1 = as_double("train.beta1", get("train.beta1"));
  t.optim.beta2 = as_double("train.beta2", get("train.beta2"));
  t.optim.warmup_epochs = static_cast<int>(as_int("train.warmup_epochs", get("train.warmup_epochs")));
  t.optim.schedule = get("train.schedule");
  t.devices = static_cast<int>(as_int("train.devices", get("train.devices")));
  const auto& precision = get("train.precision");
  if (precision != "float32" && precision != "float64") {
    throw ConfigError("train.precision: expected float32 or float64, got '" + precision + "'");
  }
  t.float64 = precision == "float64";
  t.save_checkpoints = as_bool("train.save_checkpoints", get("train.save_checkpoints"));

  const auto& pipeline = get("augment.pipeline");
  if (pipeline == "auto") {
    t.augment = objective == Objective::kSimclr ? "simclr" : objective == Objective::kMae ? "mae_pretrain" : "supervised";
  } else {
    t.augment = pipeline;
  }
  std::map<std::int64_t, std::string> lines;
  for (const auto& [key, value] : values_) {
    if (is_transform_key(key)) lines[as_int(key, key.substr(std::string("augment.transform_").size()))] = value;
  }
  if (!lines.empty()) {
    AugmentSpec spec;
    spec.name = "custom";
    for (const auto& [i, line] : lines) {
      try {
        spec.transforms.push_back(parse_transform(line));
      } catch (const Error& e) {
        throw ConfigError("augment.transform_" + std::to_string(i) + ": " + e.what());
      }
    }
    t.augment_spec = spec;
  }
  t.config_text = canonical();
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  auto head = [&](const std::string& p, HeadTraining& h) {
    h.epochs = static_cast<int>(as_int("eval." + p + "_epochs", get("eval." + p + "_epochs")));
    h.batch_size = static_cast<int>(as_int("eval." + p + "_batch_size", get("eval." + p + "_batch_size")));
    h.optim.lr = as_double("eval." + p + "_lr", get("eval." + p + "_lr"));
    h.optim.weight_decay = as_double("eval." + p + "_weight_decay", get("eval." + p + "_weight_decay"));
  };
  head("probe", e.probe);
  head("finetune", e.finetune);
  head("supervised", e.supervised);
  e.config_hash = hash();
  try {
    e.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what());
  }
  return e;
}

DownstreamTask RunConfig::task() const {
  try {
    return DownstreamTask::named(get("eval.task"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("eval.task: ") + e.what());
  }
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(get("eval.seeds"))) {
    const auto v = as_int("eval.seeds", s);
    if (v < 0) throw ConfigError("eval.seeds: seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ConfigError("eval.seeds: need at least one seed");
  return out;
}

std::filesystem::path RunConfig::manifest_path() const {
  require(std::vector<std::string>{"data.manifest"});
  std::filesystem::path p = get("data.manifest");
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  if (!std::filesystem::is_regular_file(p)) throw ConfigError("data.manifest: no such file " + p.string());
  return p;
}

std::filesystem::path RunConfig::output_dir() const {
  require(std::vector<std::string>{"output.dir"});
  std::filesystem::path p = get("output.dir");
  if (p.is_relative()) {
    if (const char* root = std::getenv("BRAINSSL_OUTPUT_ROOT"); root && *root) {
      p = std::filesystem::path(root) / p;
    } else if (!base_dir_.empty()) {
      p = base_dir_ / p;
    }
  }
  return p;
}

std::map<std::string, std::string> model_entries(const TrainConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& v = cfg.vit;
  return {
      {"model.architecture", cfg.architecture},
      {"model.input_shape", join_shape(cfg.input_shape())},
      {"model.widths", std::to_string(e.widths[0]) + "," + std::to_string(e.widths[1]) + "," +
                           std::to_string(e.widths[2]) + "," + std::to_string(e.widths[3])},
      {"model.projection_dim", std::to_string(e.projection_dim)},
      {"model.projection_hidden", std::to_string(e.projection_hidden)},
      {"model.temperature", num(e.temperature)},
      {"model.patch", join_shape(v.patch)},
      {"model.embed_dim", std::to_string(v.embed_dim)},
      {"model.depth", std::to_string(v.depth)},
      {"model.heads", std::to_string(v.heads)},
      {"model.mlp_ratio", num(v.mlp_ratio)},
      {"model.decoder_embed_dim", std::to_string(v.decoder_embed_dim)},
      {"model.decoder_depth", std::to_string(v.decoder_depth)},
      {"model.decoder_heads", std::to_string(v.decoder_heads)},
      {"model.mask_ratio", num(v.mask_ratio)},
      {"model.per_voxel_loss", v.per_voxel_loss ? "true" : "false"},
  };
}

void apply_model_entries(const std::map<std::string, std::string>& m, TrainConfig& cfg) {
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
  };
  if (auto* v = get("model.architecture")) {
    if (*v != "resnet18_3d" && *v != "vit_tiny") {
      throw ConfigError("model.architecture: expected resnet18_3d or vit_tiny, got '" + *v + "'");
    }
    cfg.architecture = *v;
  }
  if (auto* v = get("model.input_shape")) {
    cfg.encoder.input_shape = parse_shape("model.input_shape", *v);
    cfg.vit.input_shape = cfg.encoder.input_shape;
  }
  if (auto* v = get("model.widths")) {
    const auto parts = split_list(*v);
    if (parts.size() != 4) throw ConfigError("model.widths: expected four integers, got '" + *v + "'");
    for (int i = 0; i < 4; ++i) cfg.encoder.widths[i] = as_int("model.widths", parts[i]);
  }
  auto i64 = [&](const char* key, std::int64_t& out) {
    if (auto* v = get(key)) out = as_int(key, *v);
  };
  auto dbl = [&](const char* key, double& out) {
    if (auto* v = get(key)) out = as_double(key, *v);
  };
  i64("model.projection_dim", cfg.encoder.projection_dim);
  i64("model.projection_hidden", cfg.encoder.projection_hidden);
  dbl("model.temperature", cfg.encoder.temperature);
  if (auto* v = get("model.patch")) cfg.vit.patch = parse_shape("model.patch", *v);
  i64("model.embed_dim", cfg.vit.embed_dim);
  i64("model.depth", cfg.vit.depth);
  i64("model.heads", cfg.vit.heads);
  dbl("model.mlp_ratio", cfg.vit.mlp_ratio);
  i64("model.decoder_embed_dim", cfg.vit.decoder_embed_dim);
  i64("model.decoder_depth", cfg.vit.decoder_depth);
  i64("model.decoder_heads", cfg.vit.decoder_heads);
  dbl("model.mask_ratio", cfg.vit.mask_ratio);
  if (auto* v = get("model.per_voxel_loss")) cfg.vit.per_voxel_loss = as_bool("model.per_voxel_loss", *v);
}

}  // namespace brainssl
