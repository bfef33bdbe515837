// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acoustic frontend: log-Mel extraction, per-utterance mean/variance
// normalization, SpecAugment-style masking and the VGG convolutional
// subsampler that produces the transformer input.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deeptrf/params.hpp"
#include "deeptrf/rng.hpp"
#include "deeptrf/tensor.hpp"

namespace deeptrf {

struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dims = 0;
  std::vector<double> values;  // frames x dims, row-major
  double frame_shift_ms = 10.0;
  bool normalized = false;

  double& at(std::size_t t, std::size_t d) { return values[t * dims + d]; }
  double at(std::size_t t, std::size_t d) const { return values[t * dims + d]; }
  Tensor to_tensor() const;
};

struct LogMelOptions {
  std::size_t num_bins = 80;
  double window_ms = 25.0;
  double shift_ms = 10.0;
  double energy_floor = 1e-10;
};

// Triangular filters equally spaced on the mel scale between 0 Hz and Nyquist.
class MelFilterbank {
 public:
  MelFilterbank(int sample_rate, std::size_t window_length, std::size_t num_bins);

  std::size_t fft_size() const { return fft_size_; }
  std::size_t num_bins() const { return center_hz_.size(); }
  const std::vector<double>& center_hz() const { return center_hz_; }
  // Per-bin weights over the fft_size/2 + 1 spectrum bins.
  const std::vector<std::vector<double>>& weights() const { return weights_; }
  double weight_sum(std::size_t bin) const;

 private:
  std::size_t fft_size_;
  std::vector<double> center_hz_;
  std::vector<std::vector<double>> weights_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Natural-log Mel energies: ln(sum_k w_k * max(|X_k|^2, floor)).
// Hamming window, no pre-emphasis or dither.
FeatureMatrix logmel_extract(std::span<const double> pcm, int sample_rate, const LogMelOptions& options = {});

// Per-dimension zero mean / unit variance over the utterance.
FeatureMatrix normalize(const FeatureMatrix& features);

struct AugmentPolicy {
  std::size_t freq_mask_width = 27;
  std::size_t num_freq_masks = 2;
  std::size_t time_mask_width = 100;
  std::size_t num_time_masks = 2;
  bool enabled = false;
};

struct MaskBand {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct MaskDraw {
  std::vector<MaskBand> freq;
  std::vector<MaskBand> time;
};

// Widths are uniform on [0, min(W, axis length)], offsets uniform over the
// positions where the band fits.
MaskDraw draw_masks(const AugmentPolicy& policy, std::size_t frames, std::size_t dims, Rng& rng);
FeatureMatrix apply_masks(const FeatureMatrix& features, const MaskDraw& masks);
FeatureMatrix spec_augment(const FeatureMatrix& features, const AugmentPolicy& policy, Rng& rng);

enum class FrontendMode { Ctc, Hybrid };

std::string to_string(FrontendMode mode);
FrontendMode frontend_mode_from_string(const std::string& text);
std::size_t subsampling_factor(FrontendMode mode);

struct VggConfig {
  std::size_t input_dims = 80;
  std::size_t channels1 = 32;
  std::size_t channels2 = 64;
  std::size_t output_dims = 512;
  FrontendMode mode = FrontendMode::Ctc;

  std::size_t output_frames(std::size_t frames) const;
  std::size_t flattened_width() const;
};

// Two VGG blocks (two 3x3 convs + ReLU each, then max-pooling) followed by a
// linear projection of the flattened channel x frequency axes.
class VggFrontend {
 public:
  static void declare(ParamSpecs& specs, const std::string& prefix, const VggConfig& config);
  VggFrontend(const ParameterStore& params, const std::string& prefix, const VggConfig& config);

  // features [S, input_dims] -> [S / factor, output_dims]
  Tensor forward(const Tensor& features) const;
  const VggConfig& config() const { return config_; }

 private:
  VggConfig config_;
  Tensor conv1a_w_, conv1a_b_, conv1b_w_, conv1b_b_;
  Tensor conv2a_w_, conv2a_b_, conv2b_w_, conv2b_b_;
  Tensor proj_w_, proj_b_;
};

// 16-bit PCM WAV (mono; multi-channel input is averaged). Samples scaled to [-1, 1).
struct Waveform {
  int sample_rate = 16000;
  std::vector<double> samples;
};
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

// Precomputed features: "FEAT" | version u64 | S u64 | dims u64 | f64[S*dims].
inline constexpr std::uint64_t kFeatVersion = 1;
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);

}  // namespace deeptrf
