// kws/audio.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef KWS_AUDIO_HPP_
#define KWS_AUDIO_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "kws/common.hpp"

namespace kws {

constexpr int kSampleRate = 16000;

struct AudioClip {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = kSampleRate;
  std::optional<Label> label;   // absent on the unlabeled pool
  Domain domain = Domain::Source;
  int64_t clip_id = 0;
  std::optional<int64_t> wake_center;  // sample index of the wakeword midpoint
};

// Controls both base-clip synthesis (snr_db, noise_tilt) and the channel
// shift (channel_decay, gain_db, snr_db as re-noise level). snr_db of
// +infinity means "no noise added".
struct ShiftParams {
  double snr_db = 12.0;
  double channel_decay = 0.0;  // in [0, 1)
  double gain_db = 0.0;
  double noise_tilt = 0.0;     // one-pole coefficient in (-1, 1)
  uint64_t rng_seed = 0;
};

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace kws

#endif  // KWS_AUDIO_HPP_
