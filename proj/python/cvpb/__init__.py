# Copyright 2026 The cvpb Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Test-time adaptation with convolutional visual prompts."""

from ._core import (
    ConfigError,
    FormatError,
    IntegrityError,
    ShapeError,
    apply_cvp,
    cli,
    corrupt,
    corruption_kinds,
    default_config,
    emit_report,
    load_cifar10,
    load_container,
    mce,
    normalize_config,
    parse_cifar10,
    reversal_residual,
    run_experiment,
    save_container,
    sharpness_kernel,
    ssim,
    summarize,
    swd,
    synth_shapes,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
