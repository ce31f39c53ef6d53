// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/params.hpp"

namespace ssladd {

std::string_view GroupName(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kLora: return "lora";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kHamoe: return "hamoe";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

ParamGroup GroupFromName(std::string_view name) {
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kLora, ParamGroup::kAdapter, ParamGroup::kHamoe, ParamGroup::kHead})
    if (GroupName(g) == name) return g;
  Fail(ErrorCategory::kFormat, "unknown parameter group '" + std::string(name) + "'");
}

std::size_t ParameterStore::Add(std::string name, Tensor value, ParamGroup group) {
  if (index_.count(name) || buffer_index_.count(name))
    Fail(ErrorCategory::kState, "duplicate parameter name '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(Parameter{std::move(name), std::move(value), group, false});
  return params_.size() - 1;
}

std::size_t ParameterStore::AddBuffer(std::string name, Tensor value) {
  if (index_.count(name) || buffer_index_.count(name))
    Fail(ErrorCategory::kState, "duplicate buffer name '" + name + "'");
  buffer_index_[name] = buffers_.size();
  buffers_.push_back(Buffer{std::move(name), std::move(value)});
  return buffers_.size() - 1;
}

std::size_t ParameterStore::Id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) Fail(ErrorCategory::kState, "no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::buffer(const std::string& name) const {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) Fail(ErrorCategory::kState, "no buffer named '" + name + "'");
  return buffers_[it->second].value;
}

Tensor& ParameterStore::mutable_buffer(const std::string& name) {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) Fail(ErrorCategory::kState, "no buffer named '" + name + "'");
  return buffers_[it->second].value;
}

ag::Var ParameterStore::Use(ag::Tape& tape, const std::string& name) const {
  const std::size_t id = Id(name);
  return tape.Param(params_[id].value, id, !params_[id].frozen);
}

ParamCounts ParameterStore::Count() const {
  ParamCounts c;
  for (const Parameter& p : params_) {
    c.total += p.value.size();
    if (!p.frozen) c.trainable += p.value.size();
  }
  return c;
}

ParamCounts ParameterStore::Count(ParamGroup group) const {
  ParamCounts c;
  for (const Parameter& p : params_) {
    if (p.group != group) continue;
    c.total += p.value.size();
    if (!p.frozen) c.trainable += p.value.size();
  }
  return c;
}

bool operator==(const Parameter& a, const Parameter& b) {
  return a.name == b.name && a.group == b.group && a.frozen == b.frozen && a.value == b.value;
}

bool operator==(const Buffer& a, const Buffer& b) { return a.name == b.name && a.value == b.value; }

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  return a.params_ == b.params_ && a.buffers_ == b.buffers_;
}

}  // namespace ssladd
