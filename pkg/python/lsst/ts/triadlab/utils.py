# This file is part of ts_triadlab.
#
# Developed for the Vera Rubin Observatory Telescope and Site Systems.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

__all__ = [
    "canonical_json",
    "config_hash",
    "dumps_json",
    "json_safe",
    "merge_dotted",
    "set_dotted",
    "get_dotted",
]

import copy
import hashlib
import json
import math
import typing


def canonical_json(value: typing.Any) -> str:
    """Serialize value to JSON with sorted keys and no whitespace.

    Parameters
    ----------
    value : `object`
        JSON serializable value.

    Returns
    -------
    text : `str`
        Canonical JSON text. Equal values always give equal text.
    """
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict[str, typing.Any]) -> str:
    """Hash of a configuration, ignoring its seed.

    Replications of the same configuration differ only in seed, so they
    share the hash.

    Parameters
    ----------
    config : `dict`
        Configuration dictionary. Top level ``seed`` key is ignored.

    Returns
    -------
    hash : `str`
        Hex encoded SHA-256 digest.
    """
    stripped = {key: value for key, value in config.items() if key != "seed"}
    return hashlib.sha256(canonical_json(stripped).encode()).hexdigest()


def get_dotted(config: dict[str, typing.Any], key: str) -> typing.Any:
    """Return value stored under dotted key, e.g. ``replay.alpha``.

    Raises
    ------
    KeyError
        When a path element doesn't exist.
    """
    value: typing.Any = config
    for part in key.split("."):
        value = value[part]
    return value


def set_dotted(
    config: dict[str, typing.Any], key: str, value: typing.Any
) -> dict[str, typing.Any]:
    """Return a copy of config with value stored under dotted key.

    Missing intermediate dictionaries are created.

    Parameters
    ----------
    config : `dict`
        Configuration dictionary. Not modified.
    key : `str`
        Dot separated path, e.g. ``bootstrap.n``.
    value : `object`
        New value.

    Returns
    -------
    config : `dict`
        Updated deep copy.
    """
    ret = copy.deepcopy(config)
    parts = key.split(".")
    node = ret
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"Cannot set {key}: {part} is not a mapping")
    node[parts[-1]] = copy.deepcopy(value)
    return ret


def merge_dotted(
    config: dict[str, typing.Any], key: str, values: dict[str, typing.Any]
) -> dict[str, typing.Any]:
    """Return a copy of config with values merged into the mapping at a
    dotted key.

    Keys of the mapping that values doesn't name are kept, so
    ``merge_dotted(config, "replay", {"alpha": 2.0})`` keeps the replay
    capacity.

    Raises
    ------
    ValueError
        When the existing value at key is not a mapping.
    """
    try:
        current = get_dotted(config, key)
    except KeyError:
        current = {}
    if not isinstance(current, dict):
        raise ValueError(f"Cannot merge into {key}: it is not a mapping")
    return set_dotted(config, key, {**current, **values})


def json_safe(value: typing.Any) -> typing.Any:
    """Copy of value with non-finite floats replaced by the strings
    ``"nan"``, ``"inf"`` and ``"-inf"``.

    Strict JSON has no literal for them; ``float()`` reads the strings
    back.
    """
    if isinstance(value, float) and not math.isfinite(value):
        return str(float(value))
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def dumps_json(value: typing.Any) -> str:
    """Indented, key-sorted strict JSON text of value, see `json_safe`."""
    text = json.dumps(json_safe(value), indent=2, sort_keys=True, allow_nan=False)
    return text + "\n"
