// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/autograd.hpp"
#include "ssladd/tensor.hpp"

namespace ssladd {

enum class ParamGroup : std::uint8_t {
  kEncoder = 0,  // base SSL encoder weights
  kLora = 1,
  kAdapter = 2,
  kHamoe = 3,
  kHead = 4,
};

std::string_view GroupName(ParamGroup g);
ParamGroup GroupFromName(std::string_view name);
inline bool IsPeft(ParamGroup g) { return g == ParamGroup::kLora || g == ParamGroup::kAdapter; }

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::kEncoder;
  bool frozen = false;
};

// Non-trainable state stored alongside parameters: batch-norm running
// statistics and the fixed quantizer tables. Buffers are not counted as
// parameters.
struct Buffer {
  std::string name;
  Tensor value;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total); }
};

class ParameterStore {
 public:
  std::size_t Add(std::string name, Tensor value, ParamGroup group);
  std::size_t AddBuffer(std::string name, Tensor value);

  bool Contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t Id(const std::string& name) const;
  Parameter& at(std::size_t id) { return params_.at(id); }
  const Parameter& at(std::size_t id) const { return params_.at(id); }
  Parameter& operator[](const std::string& name) { return params_[Id(name)]; }
  const Parameter& operator[](const std::string& name) const { return params_[Id(name)]; }

  bool HasBuffer(const std::string& name) const { return buffer_index_.count(name) != 0; }
  const Tensor& buffer(const std::string& name) const;
  Tensor& mutable_buffer(const std::string& name);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }
  std::size_t size() const { return params_.size(); }

  // Parameter leaf on the tape; it requires a gradient unless frozen.
  ag::Var Use(ag::Tape& tape, const std::string& name) const;

  ParamCounts Count() const;
  ParamCounts Count(ParamGroup group) const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> buffer_index_;
};

bool operator==(const Parameter& a, const Parameter& b);
bool operator==(const Buffer& a, const Buffer& b);

}  // namespace ssladd
