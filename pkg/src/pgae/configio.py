"""Config serialization: dataclass trees <-> dicts, files, dotted overrides.

Every config key addressable as a dotted path (``norm_scheme.use_spectral``)
so CLI flags, config files, and presets all speak the same schema. Floats
may be infinite (the disabled-margin value), which JSON's ``Infinity``
literal and YAML's ``.inf`` both carry.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import types
import typing
from pathlib import Path

import yaml

from .exceptions import ConfigurationError


def dataclass_to_dict(obj):
    """Recursively convert a dataclass tree to plain dicts/lists/scalars."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: dataclass_to_dict(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [dataclass_to_dict(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dict):
        return {k: dataclass_to_dict(v) for k, v in obj.items()}
    return obj


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args
    return [tp]


def _coerce(value, tp):
    if tp is typing.Any or tp is None:
        return value
    if dataclasses.is_dataclass(tp):
        if isinstance(value, tp):
            return value
        if isinstance(value, dict):
            return dataclass_from_dict(tp, value)
        if isinstance(value, (list, tuple)):
            return tp(*value)
        raise ConfigurationError(f"cannot build {tp.__name__} from {value!r}")
    origin = typing.get_origin(tp)
    if origin in (list,):
        (item_tp,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(v, item_tp) for v in value]
    if origin in (tuple,):
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0]) for v in value)
        return tuple(_coerce(v, a) for v, a in zip(value, args))
    if origin in (dict,):
        return dict(value)
    if tp is bool:
        return parse_bool(value)
    if tp is int:
        return int(value)
    if tp is float:
        return parse_float(value)
    if tp in (str, Path):
        return tp(value)
    return value


def dataclass_from_dict(cls, data: dict):
    """Rebuild a dataclass tree from a plain dict using field annotations."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    field_names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in field_names:
            raise ConfigurationError(f"unknown config key {key!r} for {cls.__name__}")
        candidates = _unwrap_optional(hints[key])
        if value is None:
            kwargs[key] = None
            continue
        last_error = None
        for tp in candidates:
            try:
                kwargs[key] = _coerce(value, tp)
                break
            except (ConfigurationError, TypeError, ValueError) as exc:
                last_error = exc
        else:
            raise ConfigurationError(f"cannot coerce {key}={value!r}: {last_error}")
    return cls(**kwargs)


def flatten_config(obj, prefix: str = "") -> dict[str, object]:
    """Dotted-key view of a config tree; list elements become ``key.0`` etc."""
    out: dict[str, object] = {}
    data = dataclass_to_dict(obj) if dataclasses.is_dataclass(obj) else obj
    if isinstance(data, dict):
        for key, value in data.items():
            out.update(flatten_config(value, f"{prefix}{key}."))
    elif isinstance(data, list):
        for i, value in enumerate(data):
            out.update(flatten_config(value, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = data
    return out


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
    raise ConfigurationError(f"cannot interpret {value!r} as a boolean")


def parse_float(value) -> float:
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("inf", "infinity", "+inf", ".inf"):
            return math.inf
        if lowered in ("-inf", "-infinity", "-.inf"):
            return -math.inf
    out = float(value)
    if isinstance(value, str) and math.isnan(out):
        raise ConfigurationError("NaN is not a valid config value")
    return out


def _parse_scalar(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false", "yes", "no", "on", "off"):
        return parse_bool(text)
    if lowered in ("null", "none"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return parse_float(text)
    except (ConfigurationError, ValueError):
        return text


def apply_overrides(config, overrides: dict[str, object]):
    """Apply dotted-key overrides onto a dataclass tree, returning a new tree.

    String override values are parsed (bool/int/float/inf/JSON lists); the
    rebuilt tree re-runs every dataclass validator.
    """
    data = dataclass_to_dict(config)
    for dotted, raw in overrides.items():
        value = raw
        if isinstance(raw, str):
            stripped = raw.strip()
            if stripped.startswith(("[", "{")):
                try:
                    value = json.loads(stripped)
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(f"bad value for {dotted!r}: {exc}") from exc
            else:
                value = _parse_scalar(stripped)
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            elif isinstance(node, dict):
                if part not in node:
                    raise ConfigurationError(f"unknown config key {dotted!r} (at {part!r})")
                node = node[part]
            else:
                raise ConfigurationError(f"config key {dotted!r} descends into a scalar")
        leaf = parts[-1]
        if isinstance(node, list):
            node[int(leaf)] = value
        elif isinstance(node, dict):
            if leaf not in node:
                raise ConfigurationError(f"unknown config key {dotted!r} (at {leaf!r})")
            node[leaf] = value
        else:
            raise ConfigurationError(f"config key {dotted!r} descends into a scalar")
    return dataclass_from_dict(type(config), data)


def config_hash(config) -> str:
    """Stable hash of the canonical JSON form of a config tree."""
    return config_hash_dict(dataclass_to_dict(config))


def config_hash_dict(data: dict) -> str:
    canonical = json.dumps(data, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def save_config_file(config, path: str | Path) -> None:
    path = Path(path)
    data = dataclass_to_dict(config)
    if path.suffix in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(data, sort_keys=False))
    else:
        path.write_text(json.dumps(data, indent=2))


def load_config_dict(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return data
