"""Progressive training orchestration.

Each training step runs one encoder update followed by a configurable
number of decoder updates (two by default) on fresh sphere-sampled
codes; gradients never cross between the two optimizers, and an
exponential moving average of the decoder is maintained as the
generator used for all evaluation. Phases double the resolution, with
the new level faded in linearly over the first half of the phase.
"""

from __future__ import annotations

import copy
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch
from torch import Tensor

from . import configio
from .data import BatchCursor, Dataset
from .exceptions import (CheckpointMismatchError, ConfigurationError,
                         TrainingDivergedError)
from .losses import (LossReport, LossWeights, MarginSchedule, batch_moments,
                     decoder_loss, encoder_loss, kl_from_moments, margin_for,
                     recon_x, recon_z)
from .model import (ModelSnapshot, NetworkConfig, PhaseState, build_networks,
                    ema_update)
from .normalization import NormScheme, apply_norm_scheme

CHECKPOINT_FORMAT_VERSION = 1
_EVAL_SEED_STRIDE = 7919


@dataclass
class OptimizerConfig:
    alpha: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    epsilon: float = 1e-8


@dataclass
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    phase_samples: list[int] = field(default_factory=lambda: [2_400_000] * 7)
    batch_schedule: list[int] = field(default_factory=lambda: [1024, 512, 256, 128, 64, 32, 16])
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    decoder_steps_per_encoder_step: int = 2
    ema_decay: float = 0.999
    margin_schedule: MarginSchedule = field(default_factory=MarginSchedule.disabled)
    norm_scheme: NormScheme = field(default_factory=lambda: NormScheme(use_spectral=True))
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    metric_cadence: int = 0
    fid_every_windows: int = 0
    fid_samples: int = 1000
    val_samples: int = 64
    divergence_gap_threshold: float = 50.0
    divergence_windows: int = 3

    def __post_init__(self):
        levels = self.network.levels
        if len(self.phase_samples) != levels or len(self.batch_schedule) != levels:
            raise ConfigurationError(
                f"phase_samples/batch_schedule must list all {levels} levels"
            )
        if self.decoder_steps_per_encoder_step < 1:
            raise ConfigurationError("decoder_steps_per_encoder_step must be >= 1")
        if any(b < 2 for b in self.batch_schedule):
            raise ConfigurationError("batch sizes must be >= 2 (KL needs a variance)")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1]")

    def phase_start(self, level: int) -> int:
        return sum(self.phase_samples[:level])

    @property
    def total_samples(self) -> int:
        return sum(self.phase_samples)


def build_optimizer(params, config: OptimizerConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.alpha,
                            betas=(config.beta1, config.beta2), eps=config.epsilon)


def sample_unit_codes(n: int, dim: int, generator: torch.Generator) -> Tensor:
    """Draw codes from N(0, I) and project them onto the unit sphere."""
    z = torch.randn(n, dim, generator=generator)
    return z / z.norm(dim=1, keepdim=True)


@dataclass
class TrainResult:
    snapshot: ModelSnapshot
    log: list[dict]
    metrics: list[dict]
    diverged: bool = False
    log_path: Path | None = None
    metrics_path: Path | None = None
    checkpoint_path: Path | None = None


class Trainer:
    """Owns the model pair, optimizers, and all training-time randomness."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.config_hash = configio.config_hash(config)
        torch.manual_seed(config.seed)
        self.encoder, self.decoder = build_networks(config.network)
        apply_norm_scheme(self.encoder, self.decoder, config.norm_scheme)
        self.ema_decoder = copy.deepcopy(self.decoder)
        self.enc_opt = build_optimizer(self.encoder.parameters(), config.optimizer)
        self.dec_opt = build_optimizer(self.decoder.parameters(), config.optimizer)
        self.latent_gen = torch.Generator().manual_seed(config.seed + 1)
        self.phase = PhaseState(level=0, alpha=1.0, samples_seen=0)
        self.cursor = BatchCursor()
        self.global_step = 0
        self.encoder_updates = 0
        self.decoder_updates = 0
        self.log: list[dict] = []
        self.metrics: list[dict] = []
        self._fid_real_stats: dict[int, object] = {}

    # --- single step -----------------------------------------------------------

    def sample_codes(self, n: int) -> Tensor:
        return sample_unit_codes(n, self.config.network.latent_dim, self.latent_gen)

    @staticmethod
    def _codes_valid(codes: Tensor) -> bool:
        # overflowing activations can normalize to zero/NaN codes
        with torch.no_grad():
            if not bool(torch.isfinite(codes).all()):
                return False
            return bool(((codes.norm(dim=1) - 1.0).abs() <= 1e-3).all())

    def train_step(self, batch: Tensor) -> LossReport:
        """One encoder update then the configured number of decoder updates.

        Gradient isolation: the encoder update propagates through the
        decoder as a fixed function (its gradients are discarded), and
        vice versa; only each network's own optimizer ever steps.
        """
        config = self.config
        weights = config.loss_weights
        n = batch.shape[0]
        m_gap = margin_for(config.margin_schedule, self.phase)

        def aborted_report() -> LossReport:
            return LossReport(kl_real=math.nan, kl_fake=math.nan, gap=math.nan,
                              hinge_active=False, recon_x=math.nan,
                              recon_z=math.nan, encoder_total=math.nan,
                              decoder_total=math.nan, m_gap=m_gap,
                              non_finite=True)

        z_real = self.encoder(batch, self.phase)
        if not self._codes_valid(z_real):
            return aborted_report()
        mu_r, var_r, degen_r = batch_moments(z_real)
        kl_real = kl_from_moments(mu_r, var_r)
        with torch.no_grad():
            x_fake = self.decoder(self.sample_codes(n), self.phase)
        z_fake = self.encoder(x_fake, self.phase)
        if not self._codes_valid(z_fake):
            return aborted_report()
        mu_f, var_f, degen_f = batch_moments(z_fake)
        kl_fake = kl_from_moments(mu_f, var_f)
        x_rec = self.decoder(z_real, self.phase)
        rx = recon_x(batch, x_rec)
        enc_total = encoder_loss(kl_real, kl_fake, rx, weights, m_gap)

        kl_real_f, kl_fake_f, rx_f = (float(t.detach()) for t in (kl_real, kl_fake, rx))
        gap = kl_real_f - kl_fake_f
        report = LossReport(
            kl_real=kl_real_f, kl_fake=kl_fake_f, gap=gap,
            hinge_active=gap < -m_gap, recon_x=rx_f, recon_z=math.nan,
            encoder_total=max(-m_gap, gap) + weights.lambda_x * rx_f,
            decoder_total=math.nan, m_gap=m_gap,
            degenerate_variance=degen_r or degen_f,
        )
        if not all(math.isfinite(v) for v in (report.kl_real, report.kl_fake,
                                              report.recon_x)):
            report.non_finite = True
            return report

        self.enc_opt.zero_grad(set_to_none=True)
        self.decoder.zero_grad(set_to_none=True)
        enc_total.backward()
        self.enc_opt.step()
        self.encoder_updates += 1

        recon_z_values, dec_totals = [], []
        for _ in range(config.decoder_steps_per_encoder_step):
            z = self.sample_codes(n)
            x_hat = self.decoder(z, self.phase)
            z_rec = self.encoder(x_hat, self.phase)
            if not self._codes_valid(z_rec):
                report.non_finite = True
                break
            mu_h, var_h, degen_h = batch_moments(z_rec)
            kl_f = kl_from_moments(mu_h, var_h)
            rz = recon_z(z, z_rec)
            dec_total = decoder_loss(kl_f, rz, weights)
            report.degenerate_variance = report.degenerate_variance or degen_h
            if not math.isfinite(float(dec_total.detach())):
                report.non_finite = True
                break
            self.dec_opt.zero_grad(set_to_none=True)
            self.encoder.zero_grad(set_to_none=True)
            dec_total.backward()
            self.dec_opt.step()
            self.decoder_updates += 1
            ema_update(dict(self.ema_decoder.named_parameters()),
                       dict(self.decoder.named_parameters()), config.ema_decay)
            with torch.no_grad():
                for ema_buf, live_buf in zip(self.ema_decoder.buffers(),
                                             self.decoder.buffers()):
                    ema_buf.copy_(live_buf)
            recon_z_values.append(float(rz.detach()))
            dec_totals.append(float(dec_total.detach()))

        if recon_z_values:
            report.recon_z = sum(recon_z_values) / len(recon_z_values)
            report.decoder_total = sum(dec_totals) / len(dec_totals)
        return report

    # --- phase / schedule ------------------------------------------------------

    def _alpha_for(self, level: int, samples_into_phase: int) -> float:
        if level == 0:
            return 1.0
        half = self.config.phase_samples[level] / 2.0
        return min(1.0, samples_into_phase / half)

    def snapshot(self) -> ModelSnapshot:
        """Inference view: live encoder with the EMA decoder as generator."""
        return ModelSnapshot(self.encoder, self.ema_decoder, self.phase,
                             config_hash=self.config_hash)

    def _eval_mode(self):
        self.encoder.eval()
        self.decoder.eval()
        self.ema_decoder.eval()

    def _train_mode(self):
        self.encoder.train()
        self.decoder.train()
        self.ema_decoder.train()

    def validation_recon(self, dataset: Dataset) -> float:
        """Held-out L1 reconstruction error at the current phase resolution."""
        resolution = self.config.network.resolution_at(self.phase.level)
        images = dataset.test_images(resolution)[: self.config.val_samples]
        if not len(images):
            return math.nan
        self._eval_mode()
        try:
            with torch.no_grad():
                rec = self.decoder(self.encoder(images, self.phase), self.phase)
                return float(recon_x(images, rec))
        finally:
            self._train_mode()

    def generate_samples(self, n: int, seed: int, batch_size: int = 256) -> Tensor:
        """Images from the EMA generator at the current phase resolution."""
        gen = torch.Generator().manual_seed(seed)
        self._eval_mode()
        try:
            out = []
            with torch.no_grad():
                for start in range(0, n, batch_size):
                    codes = sample_unit_codes(min(batch_size, n - start),
                                              self.config.network.latent_dim, gen)
                    out.append(self.ema_decoder(codes, self.phase))
            return torch.cat(out)
        finally:
            self._train_mode()

    def evaluate_fid(self, extractor, dataset: Dataset, window: int) -> float:
        from .metrics import fit_feature_stats, frechet_distance

        level = self.phase.level
        if level not in self._fid_real_stats:
            real = dataset.train_images(self.config.network.resolution_at(level))
            self._fid_real_stats[level] = fit_feature_stats(extractor.features(real))
        fake = self.generate_samples(self.config.fid_samples,
                                     seed=self.config.seed * _EVAL_SEED_STRIDE + window)
        stats_fake = fit_feature_stats(extractor.features(fake))
        return frechet_distance(self._fid_real_stats[level], stats_fake)

    def run(self, dataset: Dataset, out_dir: str | Path | None = None,
            fid_extractor=None, stop_on_blowup: bool = False,
            window_hook=None) -> TrainResult:
        """Execute the remaining phases of the schedule (resume-aware)."""
        config = self.config
        out_dir = Path(out_dir) if out_dir is not None else None
        log_file = metrics_file = None
        last_checkpoint: Path | None = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_file = open(out_dir / "train_log.jsonl", "a")
            metrics_file = open(out_dir / "metrics.jsonl", "a")

        def emit_log(record: dict) -> None:
            self.log.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()

        def emit_metric(record: dict) -> None:
            self.metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()

        cadence = config.metric_cadence
        window_gaps: list[float] = []
        window_kl_real: list[float] = []
        window_kl_fake: list[float] = []
        blowup_streak = 0
        diverged = False
        final_window = (config.total_samples // cadence) if cadence else 0

        def flush_window(window: int, event: str = "window") -> dict:
            nonlocal blowup_streak, diverged
            record = {
                "event": event,
                "window": window,
                "level": self.phase.level,
                "samples_seen": self.phase.samples_seen,
                "m_gap": margin_for(config.margin_schedule, self.phase),
                "val_recon_x": self.validation_recon(dataset),
            }
            if window_gaps:
                record["gap_mean"] = sum(window_gaps) / len(window_gaps)
                record["gap_min"] = min(window_gaps)
                record["kl_real_mean"] = sum(window_kl_real) / len(window_kl_real)
                record["kl_fake_mean"] = sum(window_kl_fake) / len(window_kl_fake)
                if abs(record["gap_mean"]) > config.divergence_gap_threshold:
                    blowup_streak += 1
                else:
                    blowup_streak = 0
                if blowup_streak >= config.divergence_windows:
                    diverged = True
            if fid_extractor is not None and config.fid_every_windows:
                due = (window == 1 or window == final_window
                       or window % config.fid_every_windows == 0)
                if due or event != "window":
                    record["fid"] = self.evaluate_fid(fid_extractor, dataset, window)
            record["wallclock"] = time.time()
            emit_metric(record)
            window_gaps.clear()
            window_kl_real.clear()
            window_kl_fake.clear()
            if window_hook is not None:
                window_hook(self, record)
            return record

        try:
            start_level = self.phase.level
            for level in range(start_level, config.network.levels):
                phase_start = config.phase_start(level)
                phase_budget = config.phase_samples[level]
                batch_size = config.batch_schedule[level]
                self.phase.level = level
                while self.phase.samples_seen < phase_start + phase_budget:
                    into_phase = self.phase.samples_seen - phase_start
                    self.phase.alpha = self._alpha_for(level, into_phase)
                    batch, self.cursor = dataset.batch_at_level(level, batch_size, self.cursor)
                    prev_window = (self.phase.samples_seen // cadence) if cadence else 0
                    report = self.train_step(batch)
                    self.global_step += 1
                    self.phase.samples_seen += batch.shape[0]
                    emit_log({
                        "step": self.global_step,
                        "level": level,
                        "alpha": self.phase.alpha,
                        "samples_seen": self.phase.samples_seen,
                        **report.to_record(),
                    })
                    if report.non_finite:
                        raise TrainingDivergedError(
                            f"non-finite loss at step {self.global_step}",
                            last_checkpoint=last_checkpoint,
                        )
                    window_gaps.append(report.gap)
                    window_kl_real.append(report.kl_real)
                    window_kl_fake.append(report.kl_fake)
                    if cadence:
                        window = self.phase.samples_seen // cadence
                        if window > prev_window:
                            flush_window(window)
                            if diverged and stop_on_blowup:
                                break
                if diverged and stop_on_blowup:
                    break
                self.phase.alpha = 1.0
                flush_window((self.phase.samples_seen // cadence) if cadence else 0,
                             event="phase_end")
                if out_dir is not None:
                    last_checkpoint = out_dir / f"checkpoint_level{level}.pt"
                    save_checkpoint(self, last_checkpoint)
            final_checkpoint = None
            if out_dir is not None:
                final_checkpoint = out_dir / "checkpoint_final.pt"
                save_checkpoint(self, final_checkpoint)
            return TrainResult(
                snapshot=self.snapshot(), log=self.log, metrics=self.metrics,
                diverged=diverged,
                log_path=(out_dir / "train_log.jsonl") if out_dir else None,
                metrics_path=(out_dir / "metrics.jsonl") if out_dir else None,
                checkpoint_path=final_checkpoint,
            )
        finally:
            if log_file is not None:
                log_file.close()
            if metrics_file is not None:
                metrics_file.close()

    # --- persistence -----------------------------------------------------------

    def checkpoint_state(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": configio.dataclass_to_dict(self.config),
            "config_hash": self.config_hash,
            "encoder": self.encoder.state_dict(),
            "decoder": self.decoder.state_dict(),
            "ema_decoder": self.ema_decoder.state_dict(),
            "enc_opt": self.enc_opt.state_dict(),
            "dec_opt": self.dec_opt.state_dict(),
            "latent_gen": self.latent_gen.get_state(),
            "phase": {"level": self.phase.level, "alpha": self.phase.alpha,
                      "samples_seen": self.phase.samples_seen},
            "cursor": self.cursor.position,
            "counters": {
                "global_step": self.global_step,
                "encoder_updates": self.encoder_updates,
                "decoder_updates": self.decoder_updates,
            },
        }

    def restore(self, state: dict) -> None:
        if state.get("config_hash") != self.config_hash:
            diff = _config_diff(state.get("config", {}),
                                configio.dataclass_to_dict(self.config))
            raise CheckpointMismatchError(
                f"checkpoint config does not match active config; differing keys: {diff}"
            )
        self.encoder.load_state_dict(state["encoder"])
        self.decoder.load_state_dict(state["decoder"])
        self.ema_decoder.load_state_dict(state["ema_decoder"])
        self.enc_opt.load_state_dict(state["enc_opt"])
        self.dec_opt.load_state_dict(state["dec_opt"])
        self.latent_gen.set_state(state["latent_gen"])
        self.phase = PhaseState(**state["phase"])
        self.cursor = BatchCursor(position=state["cursor"])
        counters = state["counters"]
        self.global_step = counters["global_step"]
        self.encoder_updates = counters["encoder_updates"]
        self.decoder_updates = counters["decoder_updates"]

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "Trainer":
        state = load_checkpoint(path)
        config = configio.dataclass_from_dict(TrainConfig, state["config"])
        trainer = cls(config)
        trainer.restore(state)
        return trainer


def _config_diff(a: dict, b: dict) -> list[str]:
    flat_a = configio.flatten_config(a)
    flat_b = configio.flatten_config(b)
    keys = sorted(set(flat_a) | set(flat_b))
    return [k for k in keys if flat_a.get(k) != flat_b.get(k)]


def save_checkpoint(trainer_or_state, path: str | Path) -> Path:
    state = (trainer_or_state.checkpoint_state()
             if isinstance(trainer_or_state, Trainer) else trainer_or_state)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # serialize via a buffer: torch.save embeds the destination file stem in
    # the archive, which would break byte-identity across filenames
    buffer = io.BytesIO()
    torch.save(state, buffer)
    path.write_bytes(buffer.getvalue())
    return path


def load_checkpoint(path: str | Path, expected_config: TrainConfig | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointMismatchError(f"checkpoint {path} does not exist")
    try:
        state = torch.load(path, weights_only=False)
    except Exception as exc:
        raise CheckpointMismatchError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "format_version" not in state:
        raise CheckpointMismatchError(f"{path} is not a recognizable checkpoint")
    if state["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"checkpoint format {state['format_version']} != {CHECKPOINT_FORMAT_VERSION}"
        )
    if state.get("config_hash") != configio.config_hash_dict(state.get("config", {})):
        raise CheckpointMismatchError("checkpoint config hash does not match its payload")
    if expected_config is not None:
        expected = configio.dataclass_to_dict(expected_config)
        if expected != state["config"]:
            diff = _config_diff(state["config"], expected)
            raise CheckpointMismatchError(
                f"checkpoint was written with a different config; differing keys: {diff}"
            )
    return state


def snapshot_from_checkpoint(path: str | Path) -> ModelSnapshot:
    """Frozen inference view (live encoder + EMA decoder) of a checkpoint."""
    trainer = Trainer.from_checkpoint(path)
    return trainer.snapshot()


def run_schedule(config: TrainConfig, dataset: Dataset,
                 out_dir: str | Path | None = None, fid_extractor=None,
                 stop_on_blowup: bool = False, window_hook=None) -> TrainResult:
    """Train the full phase schedule from scratch."""
    trainer = Trainer(config)
    return trainer.run(dataset, out_dir=out_dir, fid_extractor=fid_extractor,
                       stop_on_blowup=stop_on_blowup, window_hook=window_hook)


# --- ablation ------------------------------------------------------------------

ABLATION_SCHEMES = ["PN", "PN+margin", "EQLR", "EQLR+margin", "EQLR+PN",
                    "EQLR+PN+margin", "SN", "SN+margin", "none"]


@dataclass
class AblationSpec:
    schemes: list[str] = field(default_factory=lambda: list(ABLATION_SCHEMES))
    budget_samples: int = 0
    metric_cadence: int = 0

    def __post_init__(self):
        if not self.schemes:
            raise ConfigurationError("ablation needs at least one scheme cell")


def ablation_cell_config(base: TrainConfig, cell: str) -> TrainConfig:
    """Base config with only the declared factors (scheme, margin) replaced."""
    with_margin = cell.endswith("+margin")
    scheme_name = cell.removesuffix("+margin") or "none"
    scheme = NormScheme.from_name(
        scheme_name,
        power_iterations=base.norm_scheme.power_iterations,
        pixelnorm_epsilon=base.norm_scheme.pixelnorm_epsilon,
    )
    margin = base.margin_schedule if with_margin else MarginSchedule.disabled()
    return replace(base, norm_scheme=scheme, margin_schedule=margin)


def _scale_budget(config: TrainConfig, budget: int) -> TrainConfig:
    if budget <= 0:
        return config
    total = config.total_samples
    factor = budget / total
    scaled = [max(b, int(round(s * factor)))
              for s, b in zip(config.phase_samples, config.batch_schedule)]
    return replace(config, phase_samples=scaled)


@dataclass
class AblationResult:
    rows: list[dict]
    cells: dict[str, dict]
    base_config: TrainConfig

    def summary_table(self) -> list[dict]:
        return self.rows


def run_ablation(spec: AblationSpec, base_config: TrainConfig, dataset: Dataset,
                 out_dir: str | Path | None = None, fid_extractor=None) -> AblationResult:
    """Train one cell per scheme x margin combination and tabulate the traces.

    Cells share seed, data, and schedule; only the normalization scheme
    and the margin differ. A diverged cell (non-finite loss or a
    sustained gap blow-up) is recorded as diverged, never fatal.
    """
    base = _scale_budget(base_config, spec.budget_samples)
    if spec.metric_cadence:
        base = replace(base, metric_cadence=spec.metric_cadence)
    out_dir = Path(out_dir) if out_dir is not None else None
    rows: list[dict] = []
    cells: dict[str, dict] = {}
    for cell in spec.schemes:
        config = ablation_cell_config(base, cell)
        cell_dir = (out_dir / cell.replace("+", "_")) if out_dir else None
        diverged = False
        error = None
        result = None
        try:
            result = run_schedule(config, dataset, out_dir=cell_dir,
                                  fid_extractor=fid_extractor, stop_on_blowup=True)
            diverged = result.diverged
        except TrainingDivergedError as exc:
            diverged = True
            error = str(exc)
        kl_trace = []
        fid_trace = []
        if result is not None:
            for record in result.metrics:
                if "kl_real_mean" in record:
                    kl_trace.append({
                        "samples_seen": record["samples_seen"],
                        "kl_real": record["kl_real_mean"],
                        "kl_fake": record["kl_fake_mean"],
                        "gap": record["gap_mean"],
                    })
                if "fid" in record:
                    fid_trace.append({"samples_seen": record["samples_seen"],
                                      "fid": record["fid"]})
        fids = [p["fid"] for p in fid_trace]
        row = {
            "scheme": cell.removesuffix("+margin") or "none",
            "margin": cell.endswith("+margin"),
            "diverged": diverged,
            "final_fid": fids[-1] if fids and not diverged else None,
            "best_fid": min(fids) if fids and not diverged else None,
        }
        rows.append(row)
        cells[cell] = {
            "config": configio.dataclass_to_dict(config),
            "kl_trace": kl_trace,
            "fid_trace": fid_trace,
            "diverged": diverged,
            "error": error,
        }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "cells.json").write_text(json.dumps(cells, indent=2))
        _write_summary_csv(rows, out_dir / "summary.csv")
    return AblationResult(rows=rows, cells=cells, base_config=base)


def _write_summary_csv(rows: list[dict], path: Path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["scheme", "margin", "diverged",
                                                 "final_fid", "best_fid"])
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("final_fid", "best_fid"):
                out[key] = "-" if out[key] is None else repr(out[key])
            writer.writerow(out)
