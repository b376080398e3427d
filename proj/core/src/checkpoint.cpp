#include "brainssl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* p, std::size_t n) { EVP_DigestUpdate(ctx_, p, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) {
      s += digits[md[i] >> 4];
      s += digits[md[i] & 15];
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw InvalidArgument(std::string("unsupported checkpoint dtype ") + c10::toString(t));
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  throw FormatError("unknown tensor dtype '" + s + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> module_tensors(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : m.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("checkpoint lacks metadata '" + key + "'");
  return it->second;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["format"] = 1;
  header["kind"] = c.kind;
  header["config"] = c.config_text;
  header["metadata"] = c.metadata;
  auto table = nlohmann::ordered_json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    auto flat = t.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(flat.numel()) * flat.element_size();
    table.push_back({{"name", name},
                     {"dtype", dtype_name(flat.scalar_type())},
                     {"shape", flat.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(flat);
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + " is not a checkpoint");
  if (len > (1ULL << 32)) throw FormatError("implausible checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("truncated checkpoint header in " + path.string());

  Checkpoint c;
  std::uint64_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format").get<int>() != 1) throw FormatError("unsupported checkpoint format");
    c.kind = header.at("kind").get<std::string>();
    c.config_text = header.at("config").get<std::string>();
    c.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (e.at("offset").get<std::uint64_t>() != expected) throw FormatError("non-contiguous tensor table");
      auto t = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(e.at("dtype").get<std::string>())));
      if (static_cast<std::uint64_t>(t.numel()) * t.element_size() != nbytes) {
        throw FormatError("tensor '" + e.at("name").get<std::string>() + "' size mismatch");
      }
      c.tensors.emplace_back(e.at("name").get<std::string>(), t);
      expected += nbytes;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  for (auto& [name, t] : c.tensors) {
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    if (!in) throw FormatError("truncated payload for '" + name + "' in " + path.string());
  }
  return c;
}

void add_module_state(Checkpoint& c, const torch::nn::Module& m, const std::string& prefix) {
  for (auto& [name, t] : module_tensors(m)) c.tensors.emplace_back(prefix + name, t.detach().clone());
}

void load_module_state(const Checkpoint& c, torch::nn::Module& m, const std::string& prefix) {
  torch::NoGradGuard g;
  for (auto& [name, t] : module_tensors(m)) {
    const auto* src = c.find(prefix + name);
    if (!src) throw FormatError("checkpoint lacks tensor '" + prefix + name + "'");
    if (src->sizes() != t.sizes()) {
      throw FormatError("tensor '" + prefix + name + "' has an incompatible shape");
    }
    t.copy_(*src);
  }
}

void add_optimizer_state(Checkpoint& c, torch::optim::AdamW& opt, const torch::nn::Module& m,
                         const std::string& prefix) {
  auto& state = opt.state();
  for (const auto& p : m.named_parameters(true)) {
    const auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamWParamState&>(*it->second);
    const std::string base = prefix + p.key();
    c.tensors.emplace_back(base + ".step", torch::tensor({s.step()}, torch::kInt64));
    c.tensors.emplace_back(base + ".exp_avg", s.exp_avg().clone());
    c.tensors.emplace_back(base + ".exp_avg_sq", s.exp_avg_sq().clone());
  }
}

void load_optimizer_state(const Checkpoint& c, torch::optim::AdamW& opt, const torch::nn::Module& m,
                          const std::string& prefix) {
  auto& state = opt.state();
  state.clear();
  for (const auto& p : m.named_parameters(true)) {
    const std::string base = prefix + p.key();
    const auto* step = c.find(base + ".step");
    if (!step) continue;
    const auto* avg = c.find(base + ".exp_avg");
    const auto* avg_sq = c.find(base + ".exp_avg_sq");
    if (!avg || !avg_sq) throw FormatError("incomplete optimizer state for '" + p.key() + "'");
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->step(step->item<std::int64_t>());
    s->exp_avg(avg->clone());
    s->exp_avg_sq(avg_sq->clone());
    state[p.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

std::string state_checksum(const torch::nn::Module& m) {
  Sha256 h;
  for (auto& [name, t] : module_tensors(m)) {
    const auto flat = t.detach().contiguous();
    h.update(name.data(), name.size());
    h.update(flat.data_ptr(), static_cast<std::size_t>(flat.numel() * flat.element_size()));
  }
  return h.hex();
}

}  // namespace brainssl
