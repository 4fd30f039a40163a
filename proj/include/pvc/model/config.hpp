#pragma once

#include <string>
#include <vector>

#include "pvc/dsp/stft.hpp"

namespace pvc::model {

struct ModelConfig {
  std::string profile = "toy";  // toy | paper

  int d_content = 32;
  int d_z = 16;
  int d_spk = 16;
  int hidden = 32;  // encoder/flow channel width

  int wn_layers = 4;  // posterior encoder WaveNet depth
  int wn_kernel = 5;
  int wn_dilation_growth = 1;

  int n_flow_couplings = 2;
  int flow_wn_layers = 2;
  bool flow_mean_only = true;  // frozen unit scale, log-det identically zero

  std::vector<int> upsample = {4, 4, 4};
  int gen_ch0 = 32;
  std::vector<int> resblock_kernels = {3};
  std::vector<int> resblock_dilations = {1, 3};

  std::vector<int> periods = {2, 3};
  int n_scales = 1;
  int disc_ch0 = 8;

  dsp::StftConfig stft;  // analysis framing; hop drives the shape chain
  dsp::MelConfig mel;

  u64 content_seed = 101;
  u64 speaker_seed = 202;

  i64 hop() const { return stft.hop; }
  void validate() const;
  u64 hash() const;

  static ModelConfig toy();
  static ModelConfig paper();
};

}  // namespace pvc::model
