#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "pvc/nn/autodiff.hpp"
#include "pvc/tensor.hpp"

namespace pvc::model {

// Versioned parameter container. Blobs are (name, tensor) pairs; the
// trainer stores model weights, optimizer moments, and counters side by
// side under distinct prefixes.
struct Checkpoint {
  u64 config_hash = 0;
  u64 step = 0;
  std::array<u64, 4> rng_state{};
  std::vector<std::pair<std::string, Tensor>> blobs;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // fatal on damage or version drift

// Copies live parameter values into / out of the blob list. Loading
// requires every parameter present with matching shape.
void store_params(Checkpoint& ckpt, const std::string& prefix,
                  const std::vector<std::pair<std::string, nn::Var>>& params);
void load_params(const Checkpoint& ckpt, const std::string& prefix,
                 const std::vector<std::pair<std::string, nn::Var>>& params);

// Stable tag over parameter bytes and the step counter; names pseudo-audio
// directories so different teachers never collide.
u64 params_fingerprint(const std::vector<std::pair<std::string, nn::Var>>& params, u64 step);

}  // namespace pvc::model
