# Copyright 2026 The pfrpn Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Python bindings for the pfrpn region-proposal library."""

import json as _json

from . import _core
from ._core import ConfigError, centerness_target, giou, hungarian_match, iou, run_cli

__all__ = [
    "ConfigError",
    "Model",
    "centerness_target",
    "default_config",
    "generate_scene",
    "giou",
    "hungarian_match",
    "iou",
    "run_cli",
]


def default_config():
    """Every config key with its default value."""
    return _json.loads(_core.default_config())


def generate_scene(index, **config):
    """Scene `index` under the given flat config keys, as a dict with
    `id`, `image` (H x W x 3 float array) and `boxes` (normalized x1, y1, x2, y2)."""
    return _core.generate_scene(_json.dumps(config), index)


class Model:
    """A proposal model built from flat config keys, optionally from a checkpoint."""

    def __init__(self, checkpoint="", **config):
        self._impl = _core.Model(_json.dumps(config), checkpoint)

    @property
    def config(self):
        return _json.loads(self._impl.config_json)

    def propose(self, image):
        """Ranked [(box, score), ...] for one H x W x 3 image in [0, 1]."""
        return self._impl.propose(image)

    def train(self):
        """Trains on the configured training scenes; returns per-epoch mean total loss."""
        return self._impl.train()

    def evaluate(self):
        """AR table on the held-out scenes, keyed by budget."""
        return self._impl.evaluate()

    def save(self, path):
        self._impl.save(str(path))
