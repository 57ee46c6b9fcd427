// kws/common.hpp

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

#ifndef KWS_COMMON_HPP_
#define KWS_COMMON_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kws {

// Error taxonomy. Every module throws one of these; the CLI maps them to
// stage-tagged aborts.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CalibrationError : std::runtime_error {
  explicit CalibrationError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DerivationError : std::runtime_error {
  explicit DerivationError(const std::string& msg) : std::runtime_error(msg) {}
};
struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TrainingDivergedError : std::runtime_error {
  explicit TrainingDivergedError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Label : uint8_t { Wakeword, NotWakeword };
enum class Domain : uint8_t { Source, Shifted };
enum class LabelSource : uint8_t { Human, Pseudo, Unlabeled };

std::string to_string(Label l);
std::string to_string(Domain d);
std::string to_string(LabelSource s);
Label label_from_string(const std::string& s);
Domain domain_from_string(const std::string& s);
LabelSource label_source_from_string(const std::string& s);

// Little-endian binary I/O on byte buffers. All on-disk blobs in this
// project are little-endian regardless of host order.
void append_le_f32(std::vector<uint8_t>& buf, float v);
void append_le_f64(std::vector<uint8_t>& buf, double v);
float read_le_f32(const uint8_t* p);
double read_le_f64(const uint8_t* p);

// FNV-1a 64-bit, used for the artifact checksum manifest.
uint64_t fnv1a64(const uint8_t* data, size_t n);
uint64_t fnv1a64_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace kws

#endif  // KWS_COMMON_HPP_
