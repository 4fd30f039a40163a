#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "httplib.h"
#include "pvc/eval.hpp"

namespace fs = std::filesystem;

namespace pvc::eval {

namespace {

std::string scratch_file(const std::string& ext) {
  static std::atomic<u64> counter{0};
  fs::path dir = fs::temp_directory_path() / "pvc_asr";
  fs::create_directories(dir);
  const u64 n = counter.fetch_add(1);
  return (dir / ("a" + std::to_string(getpid()) + "_" + std::to_string(n) + ext)).string();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AsrTransient("cannot read transcript file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += " ";
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::string MockAsr::transcribe(const Waveform& w, const std::string& hint) {
  (void)w;
  if (fail_budget_ > 0) {
    fail_budget_ -= 1;
    throw AsrTransient("mock: injected transient failure");
  }
  std::vector<std::string> tokens = normalize_text(hint);
  for (auto& t : tokens) {
    token_counter_ += 1;
    if (sub_every_ > 0 && token_counter_ % sub_every_ == 0) t += "0";
  }
  return join_tokens(tokens);
}

std::string MockAsr::describe() const {
  return "mock(sub_every=" + std::to_string(sub_every_) + ")";
}

HttpAsr::HttpAsr(const std::string& endpoint, i64 timeout_ms) : timeout_ms_(timeout_ms) {
  require_arg(!endpoint.empty(), "asr: empty endpoint; set eval.asr_endpoint or PVC_ASR_ENDPOINT");
  std::string rest = endpoint;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  require_arg(rest.rfind("https://", 0) != 0, "asr: https endpoints are not supported");
  const size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (slash != std::string::npos) path_ = rest.substr(slash);
  const size_t colon = hostport.find(':');
  if (colon == std::string::npos) {
    host_ = hostport;
  } else {
    host_ = hostport.substr(0, colon);
    try {
      port_ = std::stoi(hostport.substr(colon + 1));
    } catch (const std::exception&) {
      fail_arg("asr: bad port in endpoint '" + endpoint + "'");
    }
  }
  require_arg(!host_.empty(), "asr: bad endpoint '" + endpoint + "'");
}

std::string HttpAsr::transcribe(const Waveform& w, const std::string& hint) {
  (void)hint;
  const std::string tmp = scratch_file(".wav");
  write_wav(tmp, w);
  std::string body;
  {
    std::ifstream in(tmp, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    body = ss.str();
  }
  fs::remove(tmp);

  httplib::Client cli(host_, port_);
  cli.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
  cli.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
  auto res = cli.Post(path_, body, "audio/wav");
  if (!res) throw AsrTransient("asr: no response from " + host_ + ":" + std::to_string(port_));
  if (res->status >= 500)
    throw AsrTransient("asr: server error " + std::to_string(res->status));
  if (res->status != 200)
    fail("asr: endpoint returned status " + std::to_string(res->status) +
         "; check the endpoint configuration");
  return res->body;
}

std::string HttpAsr::describe() const {
  return "http(" + host_ + ":" + std::to_string(port_) + path_ + ")";
}

std::string CommandAsr::transcribe(const Waveform& w, const std::string& hint) {
  (void)hint;
  require_arg(!command_.empty(), "asr: empty command; set eval.asr_command");
  const std::string in = scratch_file(".wav");
  const std::string out = scratch_file(".txt");
  write_wav(in, w);
  const std::string cmd = command_ + " " + in + " " + out;
  const int rc = std::system(cmd.c_str());
  fs::remove(in);
  if (rc != 0) {
    fs::remove(out);
    throw AsrTransient("asr: command exited with status " + std::to_string(rc) +
                       "; check that it is installed and on PATH");
  }
  std::string text = read_text_file(out);
  fs::remove(out);
  return text;
}

std::string CommandAsr::describe() const { return "command(" + command_ + ")"; }

TranscribeOutcome transcribe_batch(const std::vector<Waveform>& waves,
                                   const std::vector<std::string>& hints, AsrClient& client,
                                   i64 retries, i64 backoff_ms) {
  require_arg(waves.size() == hints.size(), "transcribe_batch: waves and hints differ in length");
  require_arg(retries >= 0 && backoff_ms >= 0, "transcribe_batch: bad retry settings");
  TranscribeOutcome out;
  out.texts.resize(waves.size());
  for (size_t i = 0; i < waves.size(); ++i) {
    for (i64 attempt = 0; attempt <= retries; ++attempt) {
      try {
        out.texts[i] = client.transcribe(waves[i], hints[i]);
        break;
      } catch (const AsrTransient&) {
        if (attempt == retries) {
          out.failed += 1;
          break;
        }
        if (backoff_ms > 0)
          std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms << attempt));
      }
    }
  }
  return out;
}

}  // namespace pvc::eval
