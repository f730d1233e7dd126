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

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cvpb/autodiff.hpp"
#include "cvpb/tensor.hpp"

namespace cvpb {

/// Ordered named tensors. Weights are trainable; buffers (BN running
/// statistics) are state that only training-mode forward passes mutate.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t trainable_count() const;

  /// Same names, shapes and bits, in the same order.
  bool bit_equal(const ParameterSet& other) const;
  /// FNV-1a over names and raw bytes.
  std::uint64_t fingerprint() const;
  /// Copies values from `other`; names and shapes must match.
  void assign_from(const ParameterSet& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using VarMap = std::unordered_map<std::string, ad::Var>;
using NamePredicate = std::function<bool(const std::string&)>;

/// Records every trainable entry on the tape: as a parameter where
/// `trainable(name)` holds, otherwise as a constant. Buffers are skipped.
VarMap bind_params(ad::Tape& tape, const ParameterSet& set, const NamePredicate& trainable);

}  // namespace cvpb
