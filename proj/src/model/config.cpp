#include "pvc/model/config.hpp"

#include <sstream>

#include "pvc/hash.hpp"

namespace pvc::model {

void ModelConfig::validate() const {
  stft.validate();
  require_arg(profile == "toy" || profile == "paper", "model: profile must be toy or paper");
  require_arg(d_content > 0 && d_z > 0 && d_spk > 0 && hidden > 0, "model: dims must be positive");
  require_arg(d_z % 2 == 0, "model: d_z must be even for coupling splits");
  require_arg(wn_layers > 0 && flow_wn_layers > 0 && n_flow_couplings > 0, "model: depths must be positive");
  require_arg(wn_kernel % 2 == 1, "model: wn_kernel must be odd");
  require_arg(!upsample.empty() && gen_ch0 > 0, "model: generator spec incomplete");
  i64 prod = 1;
  for (int u : upsample) {
    require_arg(u > 0, "model: upsample factors must be positive");
    prod *= u;
  }
  if (prod != stft.hop) {
    std::ostringstream msg;
    msg << "model: product of upsample factors (" << prod << ") must equal hop (" << stft.hop << ")";
    fail_arg(msg.str());
  }
  require_arg(!resblock_kernels.empty() && !resblock_dilations.empty(), "model: resblock spec incomplete");
  for (int k : resblock_kernels) require_arg(k % 2 == 1, "model: resblock kernels must be odd");
  require_arg(!periods.empty() || n_scales > 0, "model: need at least one discriminator");
  for (int p : periods) require_arg(p >= 1, "model: periods must be >= 1");
  require_arg(n_scales >= 0 && disc_ch0 > 0, "model: discriminator spec incomplete");
  require_arg(mel.n_mels > 0, "model: n_mels must be positive");
}

u64 ModelConfig::hash() const {
  std::ostringstream s;
  s << profile << '|' << d_content << '|' << d_z << '|' << d_spk << '|' << hidden << '|'
    << wn_layers << '|' << wn_kernel << '|' << wn_dilation_growth << '|' << n_flow_couplings
    << '|' << flow_wn_layers << '|' << flow_mean_only << '|';
  for (int u : upsample) s << u << ',';
  s << '|' << gen_ch0 << '|';
  for (int k : resblock_kernels) s << k << ',';
  s << '|';
  for (int d : resblock_dilations) s << d << ',';
  s << '|';
  for (int p : periods) s << p << ',';
  s << '|' << n_scales << '|' << disc_ch0 << '|' << stft.rate << '|' << stft.n_fft << '|'
    << stft.hop << '|' << stft.win << '|' << mel.n_mels << '|' << mel.fmin << '|' << mel.fmax
    << '|' << content_seed << '|' << speaker_seed;
  return fnv1a64(s.str());
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.stft.rate = 16000;
  c.stft.n_fft = 128;
  c.stft.win = 128;
  c.stft.hop = 64;
  c.mel.n_mels = 20;
  c.mel.fmin = 50.0;
  c.validate();
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.profile = "paper";
  c.d_content = 1024;
  c.d_z = 192;
  c.d_spk = 256;
  c.hidden = 192;
  c.wn_layers = 16;
  c.n_flow_couplings = 4;
  c.flow_wn_layers = 4;
  c.upsample = {10, 8, 2, 2};
  c.gen_ch0 = 512;
  c.resblock_kernels = {3, 7, 11};
  c.resblock_dilations = {1, 3, 5};
  c.periods = {2, 3, 5, 7, 11};
  c.n_scales = 3;
  c.disc_ch0 = 16;
  c.stft.rate = 16000;
  c.stft.n_fft = 1280;
  c.stft.win = 1280;
  c.stft.hop = 320;
  c.mel.n_mels = 80;
  c.validate();
  return c;
}

}  // namespace pvc::model
