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

#include <ostream>

namespace cvpb {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIntegrity = 2;

/// The `cvpb` command line. Subcommands: train-backbone, train-ssl,
/// corrupt, adapt, sweep, report. Progress goes to `out`, usage text and
/// diagnostics to `err`. Returns 0 on success, 1 on a usage or
/// configuration error, 2 on an integrity failure (checkpoint or data
/// corruption, failed weight restoration, non-finite state).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cvpb
