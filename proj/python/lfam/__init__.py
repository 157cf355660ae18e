# Copyright (c) 2026 The LFAM Authors. All Rights Reserved
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for the lfam compression toolkit."""

from ._lfam import (
    CalibHistogram,
    CalibrationError,
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    StageError,
    ValueError,
    admm_refine,
    collect_histogram,
    default_config,
    dequantize,
    fake_quantize,
    global_mask,
    maxabs_scale,
    quantization_mse,
    quantize,
    read_model,
    run_pipeline,
    run_stage,
    search_threshold,
    select_fallback,
    stage_order,
    update_importance,
)

__all__ = [
    "CalibHistogram",
    "CalibrationError",
    "ConfigError",
    "DimensionError",
    "Error",
    "FormatError",
    "StageError",
    "ValueError",
    "admm_refine",
    "collect_histogram",
    "default_config",
    "dequantize",
    "fake_quantize",
    "global_mask",
    "maxabs_scale",
    "quantization_mse",
    "quantize",
    "read_model",
    "run_pipeline",
    "run_stage",
    "search_threshold",
    "select_fallback",
    "stage_order",
    "update_importance",
]
