// Copyright 2026 The cvpb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvpb/parameters.hpp"

#include <cstring>
#include <stdexcept>

namespace cvpb {

void ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParameterSet::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

Tensor& ParameterSet::get(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second].value;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.numel();
  return n;
}

bool ParameterSet::bit_equal(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto &a = entries_[i], &b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !a.value.bit_equal(b.value)) return false;
  }
  return true;
}

std::uint64_t ParameterSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (const auto& e : entries_) {
    feed(e.name.data(), e.name.size());
    for (int d : e.value.shape()) feed(&d, sizeof d);
    feed(e.value.ptr(), e.value.numel() * sizeof(float));
  }
  return h;
}

void ParameterSet::assign_from(const ParameterSet& other) {
  if (entries_.size() != other.entries_.size()) throw ShapeError("parameter sets differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape())
      throw ShapeError("parameter mismatch at " + a.name);
    std::memcpy(a.value.ptr(), b.value.ptr(), a.value.numel() * sizeof(float));
  }
}

VarMap bind_params(ad::Tape& tape, const ParameterSet& set, const NamePredicate& trainable) {
  VarMap vars;
  for (const auto& e : set.entries()) {
    if (!e.trainable) continue;
    vars.emplace(e.name, trainable && trainable(e.name) ? tape.parameter(e.value) : tape.constant(e.value));
  }
  return vars;
}

}  // namespace cvpb
