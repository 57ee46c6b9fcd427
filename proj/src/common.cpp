// common.cpp

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

#include "kws/common.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace kws {

std::string to_string(Label l) {
  return l == Label::Wakeword ? "Wakeword" : "NotWakeword";
}
std::string to_string(Domain d) {
  return d == Domain::Source ? "Source" : "Shifted";
}
std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::Human: return "Human";
    case LabelSource::Pseudo: return "Pseudo";
    default: return "Unlabeled";
  }
}

Label label_from_string(const std::string& s) {
  if (s == "Wakeword") return Label::Wakeword;
  if (s == "NotWakeword") return Label::NotWakeword;
  throw IoError("unknown label: " + s);
}
Domain domain_from_string(const std::string& s) {
  if (s == "Source") return Domain::Source;
  if (s == "Shifted") return Domain::Shifted;
  throw IoError("unknown domain: " + s);
}
LabelSource label_source_from_string(const std::string& s) {
  if (s == "Human") return LabelSource::Human;
  if (s == "Pseudo") return LabelSource::Pseudo;
  if (s == "Unlabeled") return LabelSource::Unlabeled;
  throw IoError("unknown label source: " + s);
}

void append_le_f32(std::vector<uint8_t>& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(bits >> (8 * i)));
}

void append_le_f64(std::vector<uint8_t>& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(uint8_t(bits >> (8 * i)));
}

float read_le_f32(const uint8_t* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= uint32_t(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double read_le_f64(const uint8_t* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= uint64_t(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::vector<uint8_t> bytes = read_binary_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for read: " + path);
  std::streamsize n = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!in) throw IoError("read failed: " + path);
  return bytes;
}

void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  if (!bytes.empty())
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace kws
