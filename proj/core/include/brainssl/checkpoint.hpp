#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace brainssl {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Container layout: the 8-byte magic "BSSLCKPT", a little-endian u64 header
/// length, a JSON header (kind, config text, metadata, tensor table) and the
/// raw little-endian tensor payload.
struct Checkpoint {
  std::string kind;         // "simclr", "mae" or "supervised"
  std::string config_text;  // canonical configuration document
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
  const std::string& meta(const std::string& key) const;  // throws FormatError when absent
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters and buffers under `prefix`, in registration order.
void add_module_state(Checkpoint& c, const torch::nn::Module& m, const std::string& prefix);
/// Copies tensors back; every parameter and buffer must be present with a
/// matching shape.
void load_module_state(const Checkpoint& c, torch::nn::Module& m, const std::string& prefix);

/// Moment estimates and step counts of an AdamW optimizer whose single
/// parameter group holds m.parameters().
void add_optimizer_state(Checkpoint& c, torch::optim::AdamW& opt, const torch::nn::Module& m,
                         const std::string& prefix);
void load_optimizer_state(const Checkpoint& c, torch::optim::AdamW& opt, const torch::nn::Module& m,
                          const std::string& prefix);

/// SHA-256 over names and raw bytes of all parameters and buffers.
std::string state_checksum(const torch::nn::Module& m);

}  // namespace brainssl
