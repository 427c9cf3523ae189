"""Command-line surface wiring all the library modules.

Every config key is addressable as a ``--section.key value`` override on
top of ``--config <file>`` / ``--preset <name>``; the override options in
``--help`` are generated from the config schema. Exit codes: 0 success,
1 runtime failure (including divergence aborts), 2 usage/config errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import configio, latent_ops, metrics as metrics_mod
from .data import (Dataset, SyntheticSpec, image_to_png_bytes, ingest,
                   load_image, save_image_png, tile_grid)
from .exceptions import (CapabilityError, CheckpointMismatchError,
                         ConfigurationError, TrainingDivergedError)
from .latent_ops import AttributeVector
from .model import ModelSnapshot
from .presets import RunConfig, get_preset, preset_names
from .trainer import (AblationSpec, Trainer, run_ablation, run_schedule,
                      snapshot_from_checkpoint)

logger = logging.getLogger(__name__)

JSON_SCHEMA_VERSION = 1

# Short aliases for frequently used config keys.
KEY_ALIASES = {
    "seed": ("train.seed", "data.seed"),
    "norm.spectral": ("train.norm_scheme.use_spectral",),
    "norm.pixelnorm": ("train.norm_scheme.use_pixelnorm",),
    "norm.eqlr": ("train.norm_scheme.use_eqlr",),
    "norm.power_iterations": ("train.norm_scheme.power_iterations",),
    "train.margin": ("train.margin_schedule",),
}


def _schema_keys() -> list[str]:
    return sorted(set(configio.flatten_config(RunConfig())) | set(KEY_ALIASES))


def _config_help_epilog() -> str:
    lines = ["config keys (override with --<key> <value>):"]
    lines += [f"  --{key}" for key in _schema_keys()]
    return "\n".join(lines)


def _parse_override_tokens(tokens: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            key = body
            i += 1
            if i >= len(tokens):
                raise ConfigurationError(f"config key --{key} is missing a value")
            value = tokens[i]
        overrides[key] = value
        i += 1
    return overrides


def _expand_aliases(overrides: dict[str, str]) -> dict[str, str]:
    expanded: dict[str, str] = {}
    for key, value in overrides.items():
        if key == "train.margin":
            # convenience: --train.margin=inf disables the hinge entirely
            parsed = configio.parse_float(value)
            if parsed != float("inf"):
                raise ConfigurationError(
                    "--train.margin only accepts 'inf' (use train.margin_schedule "
                    "entries for finite margins)"
                )
            expanded["train.margin_schedule.entries"] = "[]"
            continue
        for target in KEY_ALIASES.get(key, (key,)):
            expanded[target] = value
    return expanded


def load_run_config(args, overrides: dict[str, str]) -> RunConfig:
    if args.config and args.preset:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.config:
        config = configio.dataclass_from_dict(RunConfig,
                                              configio.load_config_dict(args.config))
    elif args.preset:
        config = get_preset(args.preset)
    else:
        config = get_preset("desk-synthetic")
    merged = dict(overrides)
    if args.seed is not None:
        merged.setdefault("seed", str(args.seed))
    return configio.apply_overrides(config, _expand_aliases(merged))


def _load_dataset(config: RunConfig) -> Dataset:
    if not isinstance(config.data.source, SyntheticSpec):
        root = Path(config.data.source)
        if not root.is_dir():
            raise ConfigurationError(
                f"dataset directory not found at data.source={root}"
            )
    return ingest(config.data)


def _emit_json(record: dict) -> None:
    record = {"schema_version": JSON_SCHEMA_VERSION, **record}
    print(json.dumps(record))


def _load_snapshot(checkpoint: str) -> ModelSnapshot:
    return snapshot_from_checkpoint(checkpoint)


def _load_input_image(path: str, snapshot: ModelSnapshot) -> torch.Tensor:
    img = load_image(path)
    if img.shape[-1] != snapshot.resolution:
        logger.warning("resampling %s from %d to model resolution %d",
                       path, img.shape[-1], snapshot.resolution)
        img = load_image(path, resolution=snapshot.resolution)
    return img


def _default_out(prefix: str, snapshot: ModelSnapshot, seed: int, suffix: str = "png") -> str:
    return f"{prefix}_{snapshot.config_hash}_{seed}.{suffix}"


# --- commands --------------------------------------------------------------------

def cmd_train(args, overrides) -> int:
    config = load_run_config(args, overrides)
    dataset = _load_dataset(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    configio.save_config_file(config, out_dir / "config.json")
    extractor = None
    if config.train.fid_every_windows and dataset.factors is not None:
        extractor = metrics_mod.train_factor_probe(dataset, seed=config.train.seed)
        extractor.save(out_dir / "fid_extractor.pt")
    try:
        result = run_schedule(config.train, dataset, out_dir=out_dir,
                              fid_extractor=extractor)
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    _emit_json({
        "event": "train_complete",
        "steps": len(result.log),
        "samples_seen": result.log[-1]["samples_seen"] if result.log else 0,
        "checkpoint": str(result.checkpoint_path),
        "log": str(result.log_path),
        "diverged": result.diverged,
    })
    return 0


def cmd_eval(args, overrides) -> int:
    snapshot = _load_snapshot(args.checkpoint)
    if not (args.fid or args.ppl):
        raise ConfigurationError("eval needs at least one of --fid / --ppl")
    extractor = _resolve_extractor(args.extractor)
    if args.fid:
        config = load_run_config(args, overrides)
        dataset = _load_dataset(config)
        real = dataset.train_images(snapshot.resolution)
        gen = torch.Generator().manual_seed(args.seed or 0)
        codes = torch.randn(args.n, snapshot.latent_dim, generator=gen)
        codes = codes / codes.norm(dim=1, keepdim=True)
        fake = torch.cat([snapshot.decode_codes(chunk)
                          for chunk in codes.split(256)])
        value = metrics_mod.compute_fid(extractor, real, fake)
        _emit_json({"metric": "fid", "value": value, "num_samples": args.n,
                    "seed": args.seed or 0, "config_hash": snapshot.config_hash})
    if args.ppl:
        metric = metrics_mod.FeatureSpaceMetric(extractor)
        value = metrics_mod.perceptual_path_length(
            snapshot.decode_codes, metric, snapshot.latent_dim,
            num_pairs=args.pairs, epsilon=args.epsilon, seed=args.seed or 0,
        )
        _emit_json({"metric": "ppl", "value": value, "num_samples": args.pairs,
                    "epsilon": args.epsilon, "seed": args.seed or 0,
                    "config_hash": snapshot.config_hash})
    return 0


def _resolve_extractor(spec: str):
    if spec == "pixels":
        return metrics_mod.PixelFeatures()
    path = Path(spec)
    if not path.exists():
        raise CapabilityError(f"feature extractor {spec!r} not found")
    return metrics_mod.TrainedFeatureExtractor.load(path)


def cmd_reconstruct(args, overrides) -> int:
    snapshot = _load_snapshot(args.checkpoint)
    img = _load_input_image(args.input, snapshot)
    rec = snapshot.reconstruct(img.unsqueeze(0))[0]
    out = args.out or _default_out("recon", snapshot, args.seed or 0)
    save_image_png(rec, out)
    print(out)
    return 0


def cmd_interpolate(args, overrides) -> int:
    snapshot = _load_snapshot(args.checkpoint)
    corners = torch.stack([_load_input_image(p, snapshot) for p in args.corners])
    if len(args.corners) == 2:
        rows, cols = 1, args.cells
    else:
        rows, cols = args.rows, args.cols
    grid = latent_ops.interpolation_grid(snapshot, corners, rows, cols)
    out = args.out or _default_out("interp", snapshot, args.seed or 0)
    save_image_png(tile_grid(grid), out)
    print(out)
    return 0


def _load_attribute(args) -> AttributeVector:
    path = Path(args.attribute)
    if path.exists():
        return AttributeVector.load(path)
    if args.attr_lib:
        candidate = Path(args.attr_lib) / f"{args.attribute}.json"
        if candidate.exists():
            return AttributeVector.load(candidate)
    raise ConfigurationError(f"attribute {args.attribute!r} not found")


def cmd_manipulate(args, overrides) -> int:
    snapshot = _load_snapshot(args.checkpoint)
    attr = _load_attribute(args)
    img = _load_input_image(args.input, snapshot)
    lambdas = args.lambdas if args.lambdas else [args.lam]
    frames = latent_ops.attribute_sweep(snapshot, img, attr, lambdas)
    out = args.out or _default_out("manip", snapshot, args.seed or 0)
    save_image_png(tile_grid(frames.unsqueeze(0)), out)
    print(out)
    return 0


def cmd_extract_attr(args, overrides) -> int:
    snapshot = _load_snapshot(args.checkpoint)

    def load_set(directory: str) -> torch.Tensor:
        paths = sorted(Path(directory).glob("*.png")) + sorted(Path(directory).glob("*.jpg"))
        if not paths:
            raise ConfigurationError(f"no images in --set directory {directory}")
        return torch.stack([_load_input_image(str(p), snapshot) for p in paths])

    attr = latent_ops.extract_attribute(snapshot, load_set(args.set_a),
                                        load_set(args.set_b), name=args.name)
    out = args.out or f"{args.name}.json"
    attr.save(out)
    print(out)
    return 0


def cmd_ablate(args, overrides) -> int:
    config = load_run_config(args, overrides)
    dataset = _load_dataset(config)
    if args.spec:
        spec = configio.dataclass_from_dict(AblationSpec,
                                            configio.load_config_dict(args.spec))
    else:
        spec = AblationSpec(budget_samples=args.budget,
                            metric_cadence=config.train.metric_cadence)
    extractor = None
    if dataset.factors is not None:
        extractor = metrics_mod.train_factor_probe(dataset, seed=config.train.seed)
    result = run_ablation(spec, config.train, dataset, out_dir=args.out,
                          fid_extractor=extractor)
    for row in result.rows:
        _emit_json({"event": "ablation_row", **row})
    return 0


def cmd_serve(args, overrides) -> int:
    import uvicorn

    from .serve import ServeConfig, create_app

    config = ServeConfig(checkpoint=args.checkpoint, host=args.host, port=args.port,
                         attribute_dir=args.attr_lib,
                         max_image_bytes=args.max_image_bytes)
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


# --- argument wiring ----------------------------------------------------------------

class _StrictParser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)


def _add_common(parser: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        parser.add_argument("--config", help="config file (.json/.yaml)")
        parser.add_argument("--preset", choices=preset_names(), help="named preset")
    parser.add_argument("--seed", type=int, default=None, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgae",
        description=__doc__,
        epilog=_config_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_StrictParser)

    p = sub.add_parser("train", help="run the progressive training schedule")
    _add_common(p)
    p.add_argument("--out", default="train_out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute metrics on a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fid", action="store_true")
    p.add_argument("--ppl", action="store_true")
    p.add_argument("--n", type=int, default=1000, help="generated samples for FID")
    p.add_argument("--pairs", type=int, default=1000, help="path pairs for PPL")
    p.add_argument("--epsilon", type=float, default=metrics_mod.DEFAULT_PPL_EPSILON)
    p.add_argument("--extractor", default="pixels",
                   help="'pixels' or path to a trained extractor")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="encode and decode one image")
    _add_common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate", help="latent interpolation grid between images")
    _add_common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corners", nargs="+", required=True)
    p.add_argument("--cells", type=int, default=8, help="cells for 2-corner strips")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("manipulate", help="apply an attribute vector at intensities")
    _add_common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--attribute", required=True, help="attribute name or JSON path")
    p.add_argument("--attr-lib", help="directory of stored attribute vectors")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_manipulate)

    p = sub.add_parser("extract-attr", help="attribute vector from two image sets")
    _add_common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--name", default="attribute")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract_attr)

    p = sub.add_parser("ablate", help="scheme x margin ablation matrix")
    _add_common(p)
    p.add_argument("--spec", help="AblationSpec JSON file")
    p.add_argument("--budget", type=int, default=0, help="shared per-cell budget")
    p.add_argument("--out", default="ablation_out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="HTTP inference service for a checkpoint")
    _add_common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--attr-lib", help="directory of stored attribute vectors")
    p.add_argument("--max-image-bytes", type=int, default=8_000_000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)
    try:
        overrides = _parse_override_tokens(unknown)
        return args.func(args, overrides)
    except (ConfigurationError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointMismatchError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
