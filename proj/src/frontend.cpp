// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>

#include "deeptrf/checkpoint.hpp"
#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"

namespace deeptrf {

Tensor FeatureMatrix::to_tensor() const { return Tensor::from({frames, dims}, values); }

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

namespace {

std::vector<std::vector<double>> triangle_weights(const std::vector<double>& edges_hz, std::size_t fft_size,
                                                  int sample_rate) {
  const std::size_t num_bins = edges_hz.size() - 2;
  const std::size_t spectrum = fft_size / 2 + 1;
  std::vector<std::vector<double>> w(num_bins, std::vector<double>(spectrum, 0.0));
  for (std::size_t m = 0; m < num_bins; ++m) {
    const double left = hz_to_mel(edges_hz[m]), center = hz_to_mel(edges_hz[m + 1]),
                 right = hz_to_mel(edges_hz[m + 2]);
    for (std::size_t k = 0; k < spectrum; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / static_cast<double>(fft_size));
      if (mel > left && mel < right) {
        w[m][k] = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
      }
    }
  }
  return w;
}

}  // namespace

MelFilterbank::MelFilterbank(int sample_rate, std::size_t window_length, std::size_t num_bins) {
  if (num_bins == 0) throw ConfigError("filterbank needs at least one bin");
  const double nyquist = sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(num_bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(num_bins + 1));
  }
  center_hz_.assign(edges.begin() + 1, edges.end() - 1);

  // Grow the FFT until every narrow low-frequency triangle covers a spectrum bin.
  fft_size_ = std::bit_ceil(window_length);
  for (;;) {
    weights_ = triangle_weights(edges, fft_size_, sample_rate);
    bool all_covered = true;
    for (std::size_t m = 0; m < num_bins; ++m) all_covered = all_covered && weight_sum(m) > 0.0;
    if (all_covered) break;
    fft_size_ *= 2;
    if (fft_size_ > (1u << 20)) throw ConfigError("too many Mel bins for this sample rate");
  }
}

double MelFilterbank::weight_sum(std::size_t bin) const {
  double s = 0.0;
  for (double w : weights_.at(bin)) s += w;
  return s;
}

FeatureMatrix logmel_extract(std::span<const double> pcm, int sample_rate, const LogMelOptions& options) {
  if (sample_rate != 8000 && sample_rate != 16000) {
    throw InputError("unsupported sample rate " + std::to_string(sample_rate) + " (expected 8000 or 16000)");
  }
  const auto window = static_cast<std::size_t>(std::lround(options.window_ms * sample_rate / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(options.shift_ms * sample_rate / 1000.0));
  if (pcm.size() < window) {
    throw InputError("audio of " + std::to_string(pcm.size()) + " samples is shorter than one " +
                     std::to_string(window) + "-sample window");
  }
  const MelFilterbank bank(sample_rate, window, options.num_bins);
  const std::size_t nfft = bank.fft_size();
  const std::size_t spectrum = nfft / 2 + 1;

  std::vector<double> hamming(window);
  for (std::size_t i = 0; i < window; ++i) {
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(window - 1));
  }

  using FftwBuffer = std::unique_ptr<void, decltype(&fftw_free)>;
  FftwBuffer in_buf(fftw_malloc(sizeof(double) * nfft), &fftw_free);
  FftwBuffer out_buf(fftw_malloc(sizeof(fftw_complex) * spectrum), &fftw_free);
  auto* in = static_cast<double*>(in_buf.get());
  auto* out = static_cast<fftw_complex*>(out_buf.get());
  std::unique_ptr<fftw_plan_s, decltype(&fftw_destroy_plan)> plan(
      fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in, out, FFTW_ESTIMATE), &fftw_destroy_plan);

  FeatureMatrix f;
  f.frames = (pcm.size() - window) / hop + 1;
  f.dims = options.num_bins;
  f.frame_shift_ms = options.shift_ms;
  f.values.resize(f.frames * f.dims);
  std::vector<double> power(spectrum);
  for (std::size_t t = 0; t < f.frames; ++t) {
    std::fill_n(in, nfft, 0.0);
    for (std::size_t i = 0; i < window; ++i) in[i] = pcm[t * hop + i] * hamming[i];
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < spectrum; ++k) {
      power[k] = std::max(out[k][0] * out[k][0] + out[k][1] * out[k][1], options.energy_floor);
    }
    for (std::size_t m = 0; m < f.dims; ++m) {
      const auto& w = bank.weights()[m];
      double e = 0.0;
      for (std::size_t k = 0; k < spectrum; ++k) e += w[k] * power[k];
      f.at(t, m) = std::log(e);
    }
  }
  return f;
}

FeatureMatrix normalize(const FeatureMatrix& features) {
  if (features.frames < 2) throw InputError("normalization needs at least 2 frames");
  constexpr double kVarianceFloor = 1e-8;
  FeatureMatrix out = features;
  const double n = static_cast<double>(features.frames);
  for (std::size_t d = 0; d < features.dims; ++d) {
    // Shifted by the first frame so a constant column has mean exactly equal to it.
    const double shift = features.at(0, d);
    double mu = 0.0;
    for (std::size_t t = 0; t < features.frames; ++t) mu += features.at(t, d) - shift;
    mu = shift + mu / n;
    double var = 0.0;
    for (std::size_t t = 0; t < features.frames; ++t) var += (features.at(t, d) - mu) * (features.at(t, d) - mu);
    var = std::max(var / n, kVarianceFloor);
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < features.frames; ++t) out.at(t, d) = (features.at(t, d) - mu) * inv;
  }
  out.normalized = true;
  return out;
}

MaskDraw draw_masks(const AugmentPolicy& policy, std::size_t frames, std::size_t dims, Rng& rng) {
  MaskDraw draw;
  if (!policy.enabled) return draw;
  auto draw_band = [&rng](std::size_t max_width, std::size_t length) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(std::min(max_width, length))));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(length - width)));
    return MaskBand{start, start + width};
  };
  for (std::size_t i = 0; i < policy.num_freq_masks; ++i) draw.freq.push_back(draw_band(policy.freq_mask_width, dims));
  for (std::size_t i = 0; i < policy.num_time_masks; ++i) draw.time.push_back(draw_band(policy.time_mask_width, frames));
  return draw;
}

FeatureMatrix apply_masks(const FeatureMatrix& features, const MaskDraw& masks) {
  FeatureMatrix out = features;
  for (const auto& band : masks.freq) {
    const std::size_t end = std::min(band.end, out.dims);
    for (std::size_t t = 0; t < out.frames; ++t)
      for (std::size_t d = band.begin; d < end; ++d) out.at(t, d) = 0.0;
  }
  for (const auto& band : masks.time) {
    const std::size_t end = std::min(band.end, out.frames);
    for (std::size_t t = band.begin; t < end; ++t)
      for (std::size_t d = 0; d < out.dims; ++d) out.at(t, d) = 0.0;
  }
  return out;
}

FeatureMatrix spec_augment(const FeatureMatrix& features, const AugmentPolicy& policy, Rng& rng) {
  if (!policy.enabled) return features;
  return apply_masks(features, draw_masks(policy, features.frames, features.dims, rng));
}

std::string to_string(FrontendMode mode) { return mode == FrontendMode::Ctc ? "ctc" : "hybrid"; }

FrontendMode frontend_mode_from_string(const std::string& text) {
  if (text == "ctc") return FrontendMode::Ctc;
  if (text == "hybrid") return FrontendMode::Hybrid;
  throw ConfigError("unknown mode '" + text + "' (expected ctc or hybrid)");
}

std::size_t subsampling_factor(FrontendMode mode) { return mode == FrontendMode::Ctc ? 4 : 2; }

std::size_t VggConfig::output_frames(std::size_t frames) const { return frames / subsampling_factor(mode); }

std::size_t VggConfig::flattened_width() const {
  const std::size_t freq = mode == FrontendMode::Ctc ? input_dims / 4 : input_dims / 2;
  return channels2 * freq;
}

void VggFrontend::declare(ParamSpecs& specs, const std::string& prefix, const VggConfig& c) {
  if (c.flattened_width() == 0) throw ConfigError("feature dimension too small for the VGG frontend");
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin) {
    specs.push_back({prefix + name + ".weight", {cout, cin, 3, 3}, Init::FanInUniform, cin * 9});
    specs.push_back({prefix + name + ".bias", {cout}, Init::Zeros});
  };
  conv("conv1a", c.channels1, 1);
  conv("conv1b", c.channels1, c.channels1);
  conv("conv2a", c.channels2, c.channels1);
  conv("conv2b", c.channels2, c.channels2);
  specs.push_back({prefix + "proj.weight", {c.flattened_width(), c.output_dims}, Init::FanInUniform, c.flattened_width()});
  specs.push_back({prefix + "proj.bias", {c.output_dims}, Init::Zeros});
}

VggFrontend::VggFrontend(const ParameterStore& p, const std::string& prefix, const VggConfig& config)
    : config_(config),
      conv1a_w_(p.get(prefix + "conv1a.weight")),
      conv1a_b_(p.get(prefix + "conv1a.bias")),
      conv1b_w_(p.get(prefix + "conv1b.weight")),
      conv1b_b_(p.get(prefix + "conv1b.bias")),
      conv2a_w_(p.get(prefix + "conv2a.weight")),
      conv2a_b_(p.get(prefix + "conv2a.bias")),
      conv2b_w_(p.get(prefix + "conv2b.weight")),
      conv2b_b_(p.get(prefix + "conv2b.bias")),
      proj_w_(p.get(prefix + "proj.weight")),
      proj_b_(p.get(prefix + "proj.bias")) {}

Tensor VggFrontend::forward(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != config_.input_dims) {
    throw DimensionError("VGG frontend expects [S, " + std::to_string(config_.input_dims) + "] features, got " +
                         shape_str(features.shape()));
  }
  const std::size_t factor = subsampling_factor(config_.mode);
  if (features.dim(0) < factor) {
    throw InputError("utterance of " + std::to_string(features.dim(0)) + " frames cannot be subsampled by " +
                     std::to_string(factor));
  }
  Tensor x = reshape(features, {1, features.dim(0), features.dim(1)});
  x = relu(conv2d(x, conv1a_w_, conv1a_b_));
  x = relu(conv2d(x, conv1b_w_, conv1b_b_));
  x = max_pool2d(x, 2, 2);
  x = relu(conv2d(x, conv2a_w_, conv2a_b_));
  x = relu(conv2d(x, conv2b_w_, conv2b_b_));
  if (config_.mode == FrontendMode::Ctc) x = max_pool2d(x, 2, 2);
  // [C, T, F] -> [T, C*F]
  x = swap_leading_axes(x);
  x = reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
  return linear(x, proj_w_, proj_b_);
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  auto read_u32 = [&in]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw InputError("truncated WAV header");
    return static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24));
  };
  auto read_u16 = [&in]() {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw InputError("truncated WAV header");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  };
  auto read_tag = [&in]() {
    std::string tag(4, '\0');
    in.read(tag.data(), 4);
    if (!in) throw InputError("truncated WAV file");
    return tag;
  };
  if (read_tag() != "RIFF") throw InputError(path.string() + " is not a RIFF file");
  read_u32();
  if (read_tag() != "WAVE") throw InputError(path.string() + " is not a WAVE file");

  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  for (;;) {
    const std::string tag = read_tag();
    const std::uint32_t size = read_u32();
    if (tag == "fmt ") {
      const std::uint16_t format = read_u16();
      channels = read_u16();
      rate = read_u32();
      read_u32();
      read_u16();
      bits = read_u16();
      if (format != 1 || bits != 16) throw InputError(path.string() + ": only 16-bit PCM WAV is supported");
      in.seekg(size - 16, std::ios::cur);
    } else if (tag == "data") {
      if (channels == 0) throw InputError(path.string() + ": data chunk before fmt chunk");
      const std::size_t frames = size / (2u * channels);
      Waveform wave;
      wave.sample_rate = static_cast<int>(rate);
      wave.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) acc += static_cast<std::int16_t>(read_u16()) / 32768.0;
        wave.samples[i] = acc / channels;
      }
      return wave;
    } else {
      in.seekg(size + (size & 1u), std::ios::cur);
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  auto u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&out](std::uint16_t v) {
    out.put(static_cast<char>(v & 0xff));
    out.put(static_cast<char>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(wave.sample_rate));
  u32(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  for (double s : wave.samples) {
    const auto q = static_cast<std::int16_t>(std::clamp(std::lround(s * 32768.0), -32768L, 32767L));
    u16(static_cast<std::uint16_t>(q));
  }
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write("FEAT", 4);
  le::put_u64(out, kFeatVersion);
  le::put_u64(out, features.frames);
  le::put_u64(out, features.dims);
  for (double v : features.values) le::put_f64(out, v);
  if (!out) throw InputError("failed writing " + path.string());
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "FEAT") throw InputError(path.string() + " is not a FEAT file");
  const std::uint64_t version = le::get_u64(in);
  if (version != kFeatVersion) throw InputError(path.string() + ": unsupported FEAT version " + std::to_string(version));
  FeatureMatrix f;
  f.frames = le::get_u64(in);
  f.dims = le::get_u64(in);
  if (f.frames == 0 || f.dims == 0) throw InputError(path.string() + ": empty feature matrix");
  f.values.resize(f.frames * f.dims);
  for (auto& v : f.values) v = le::get_f64(in);
  return f;
}

}  // namespace deeptrf
