"""Experiment driver: sweeps over client settings and attack variants.

A sweep point is one (E, N, B, R, variant) combination; each point runs
``trials`` times with seeds ``seed, seed + 1, ...``.  For every run the
client is simulated, the attack is run on the final round's observation,
reconstructions are matched to the ground truth and scored.

Configuration files are flat YAML mappings whose keys are the field names
of :class:`ExperimentConfig`.  The sweep axes (``E``, ``N``, ``B``, ``R``,
``variant``) accept a scalar or a list.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attack import AttackConfig, run_attack
from .datasets import load_idx, synth_dataset
from .fedsim import ClientConfig, simulate, trajectory_nonlinearity
from .metrics import CORRUPTION_PSNR, match_batch
from .model import ModelSpec

log = logging.getLogger(__name__)

RESULTS_COLUMNS = (
    "dataset", "E", "N", "B", "R", "variant", "use_NLP", "use_PR", "trial", "seed",
    "lsim", "psnr", "ssim", "wall_minutes", "param_count", "corrupted", "mem_bytes",
)
HISTORY_COLUMNS = ("iter", "total", "Lcos", "Ltv", "Lp", "Ld", "t")
TIMING_COLUMNS = ("wall_minutes",)

# label -> (attack variant, use_nlp, use_pr)
VARIANT_GRID = {
    "dlg": ("dlg", False, False),
    "ig": ("ig", False, False),
    "sme": ("sme", False, False),
    "nlsme": ("nlsme", True, True),
    "nlsme_a": ("nlsme", True, False),
    "nlsme_b": ("nlsme", False, True),
}
ABLATION_VARIANTS = ("sme", "nlsme_b", "nlsme_a", "nlsme")
SWEEP_AXES = ("E", "N", "B", "R", "variant")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    synthetic_kind: str = "gaussian_blobs"
    idx_images: str = ""
    idx_labels: str = ""
    data_seed: int = 0
    input_dims: tuple = (1, 8, 8)
    hidden_sizes: tuple = (16,)
    num_classes: int = 4
    activation: str = "tanh"
    E: list = field(default_factory=lambda: [5])
    N: list = field(default_factory=lambda: [10])
    B: list = field(default_factory=lambda: [5])
    R: list = field(default_factory=lambda: [1])
    variant: list = field(default_factory=lambda: ["sme", "nlsme"])
    client_lr: float = 0.1
    optimizer: str = "sgd"
    weight_decay: float = 0.01
    warmup_rounds: int = 0
    iterations: int = 2000
    lr: float = AttackConfig.lr
    lr_t: float = AttackConfig.lr_t
    lr_p1: float = AttackConfig.lr_p1
    lr_d: float = AttackConfig.lr_d
    lambda_tv: float = AttackConfig.lambda_tv
    lambda_p: float = AttackConfig.lambda_p
    lambda_d: float = AttackConfig.lambda_d
    lambda_cls: float = AttackConfig.lambda_cls
    trials: int = 1
    seed: int = 0
    output_dir: str = "results"
    max_runs: int = 1000

    def __post_init__(self):
        for axis in SWEEP_AXES:
            value = getattr(self, axis)
            if not isinstance(value, (list, tuple)):
                value = [value]
            setattr(self, axis, list(value))
        self.input_dims = tuple(self.input_dims)
        self.hidden_sizes = tuple(self.hidden_sizes)
        for label in self.variant:
            if label not in VARIANT_GRID:
                raise ConfigError(f"unknown variant {label!r}; expected one of {sorted(VARIANT_GRID)}")
        if self.dataset not in ("synthetic", "idx"):
            raise ConfigError(f"dataset must be 'synthetic' or 'idx', got {self.dataset!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_runs > self.max_runs:
            raise ConfigError(f"sweep has {self.n_runs} runs, over the cap of {self.max_runs}")

    @property
    def n_runs(self):
        return math.prod(len(getattr(self, a)) for a in SWEEP_AXES) * self.trials

    @property
    def spec(self):
        return ModelSpec(self.input_dims, self.hidden_sizes, self.num_classes, self.activation)

    @property
    def dataset_name(self):
        if self.dataset == "synthetic":
            return self.synthetic_kind
        return Path(self.idx_images).name

    def points(self):
        """Sweep points in a fixed order: (E, N, B, R, variant label)."""
        return list(itertools.product(self.E, self.N, self.B, self.R, self.variant))

    def attack_config(self, label, seed):
        variant, use_nlp, use_pr = VARIANT_GRID[label]
        return AttackConfig(
            variant=variant,
            iterations=self.iterations,
            lr=self.lr,
            lr_t=self.lr_t,
            lr_p1=self.lr_p1,
            lr_d=self.lr_d,
            lambda_tv=self.lambda_tv,
            lambda_p=self.lambda_p,
            lambda_d=self.lambda_d,
            lambda_cls=self.lambda_cls,
            use_nlp=use_nlp,
            use_pr=use_pr,
            seed=seed,
        )

    def client_config(self, E, N, B, R, seed):
        return ClientConfig(
            epochs=E,
            n=N,
            batch_size=B,
            lr=self.client_lr,
            optimizer=self.optimizer,
            weight_decay=self.weight_decay,
            shuffle_seed=seed,
            rounds=R,
            warmup_rounds=self.warmup_rounds,
        )


def load_config(path=None, **overrides):
    """Read a flat YAML config; unknown keys are an error.

    Keyword overrides that are not None win over the file.  Without a seed
    in either place the ``GRADINV_SEED`` environment variable is used.
    """
    values = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a flat key/value mapping")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in values:
        values["seed"] = int(os.environ.get("GRADINV_SEED", 0))
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in values.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r} must be a scalar or a list")
    return ExperimentConfig(**values)


def load_dataset(cfg, n, trial):
    if cfg.dataset == "synthetic":
        return synth_dataset(
            cfg.synthetic_kind, n, cfg.num_classes, cfg.data_seed + trial, shape=cfg.input_dims
        )
    full = load_idx(cfg.idx_images, cfg.idx_labels or None)
    if len(full) < n:
        raise ConfigError(f"IDX file has {len(full)} images, need N={n}")
    start = (trial * n) % (len(full) - n + 1)
    return full.subset(slice(start, start + n))


@dataclass
class RunOutcome:
    run_id: str
    record: dict
    reconstruction: np.ndarray = None
    truth: np.ndarray = None
    history: list = field(default_factory=list)
    error: str = ""


def _run_one(job):
    cfg, index, (E, N, B, R, label), trial = job
    seed = cfg.seed + trial
    variant, use_nlp, use_pr = VARIANT_GRID[label]
    run_id = f"run{index:04d}"
    record = {
        "dataset": cfg.dataset_name, "E": E, "N": N, "B": B, "R": R, "variant": label,
        "use_NLP": use_nlp, "use_PR": use_pr, "trial": trial, "seed": seed,
        "param_count": cfg.spec.n_params,
    }
    try:
        data = load_dataset(cfg, N, trial)
        client = cfg.client_config(E, N, B, R, seed)
        obs, _ = simulate(cfg.spec, data, client, init_seed=seed)
        result = run_attack(obs, cfg.attack_config(label, seed), data.labels)
        match = match_batch(result.reconstruction, data)
    except Exception as exc:  # one bad point must not sink the sweep
        log.warning("%s failed: %s", run_id, exc)
        record.update(lsim=math.nan, psnr=math.nan, ssim=math.nan, wall_minutes=0.0, corrupted=True, mem_bytes=0)
        return RunOutcome(run_id, record, error=str(exc))
    record.update(
        lsim=result.final_lsim,
        psnr=match.mean_psnr,
        ssim=match.mean_ssim,
        wall_minutes=result.wall_time / 60.0,
        corrupted=match.mean_psnr < CORRUPTION_PSNR,
        mem_bytes=result.peak_param_mem_estimate,
    )
    truth = data.images[match.permutation]
    return RunOutcome(run_id, record, result.reconstruction.images, truth, result.history)


def _jobs(cfg, variants=None):
    points = cfg.points()
    if variants is not None:
        points = [p[:4] + (v,) for p in dict.fromkeys(p[:4] for p in points) for v in variants]
    jobs = []
    for point in points:
        for trial in range(cfg.trials):
            jobs.append((cfg, len(jobs), point, trial))
    return jobs


def run_experiment(cfg, jobs=1, variants=None):
    """Run every sweep point and trial; outcomes come back in sweep order."""
    work = _jobs(cfg, variants)
    if len(work) > cfg.max_runs:
        raise ConfigError(f"sweep has {len(work)} runs, over the cap of {cfg.max_runs}")
    log.info("running %d attack runs with %d worker(s)", len(work), jobs)
    if jobs <= 1:
        return [_run_one(job) for job in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.10g}"
    return str(value)


def records_to_csv(records, columns=RESULTS_COLUMNS):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


def parse_results(text):
    """Parse results.csv back into typed records."""
    ints = {"E", "N", "B", "R", "trial", "seed", "param_count", "mem_bytes"}
    floats = {"lsim", "psnr", "ssim", "wall_minutes"}
    bools = {"use_NLP", "use_PR", "corrupted"}
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, value in raw.items():
            if key in ints:
                row[key] = int(value)
            elif key in floats:
                row[key] = float(value)
            elif key in bools:
                row[key] = value == "true"
            else:
                row[key] = value
        rows.append(row)
    return rows


def to_pgm_bytes(image):
    """Binary PGM (P5, maxval 255) of a (H, W) image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got {image.shape}")
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(path):
    """Read a binary P5 PGM as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w) / float(maxval)


def _flatten_channels(image):
    # (C, H, W) -> (H, C*W): channels side by side
    return np.concatenate(list(image), axis=1)


def emit_outputs(outcomes, output_dir):
    """Write results.csv, per-run history CSVs and PGM images."""
    if not outcomes:
        raise ValueError("no records to write")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(records_to_csv([o.record for o in outcomes]))
    for o in outcomes:
        if o.reconstruction is None:
            continue
        for idx, (rec, tru) in enumerate(zip(o.reconstruction, o.truth)):
            (out / f"{o.run_id}_{idx}_recon.pgm").write_bytes(to_pgm_bytes(_flatten_channels(rec)))
            (out / f"{o.run_id}_{idx}_truth.pgm").write_bytes(to_pgm_bytes(_flatten_channels(tru)))
        rows = [{"iter": i, **{k: row[k] for k in HISTORY_COLUMNS[1:]}} for i, row in enumerate(o.history)]
        (out / f"{o.run_id}_history.csv").write_text(records_to_csv(rows, HISTORY_COLUMNS))
    return out / "results.csv"


def simulate_points(cfg):
    """Client simulation only: per point, T, update norm and trajectory nonlinearity."""
    rows = []
    seen = dict.fromkeys(p[:4] for p in cfg.points())
    for E, N, B, R in seen:
        for trial in range(cfg.trials):
            seed = cfg.seed + trial
            data = load_dataset(cfg, N, trial)
            client = cfg.client_config(E, N, B, R, seed)
            obs, traj = simulate(cfg.spec, data, client, init_seed=seed)
            rows.append({
                "dataset": cfg.dataset_name, "E": E, "N": N, "B": B, "R": R, "trial": trial,
                "seed": seed, "T": client.T, "update_norm": float(np.linalg.norm(obs.delta)),
                "nonlinearity": trajectory_nonlinearity(traj), "param_count": cfg.spec.n_params,
            })
    return rows


def strip_timing(csv_text):
    """results.csv with the timing columns blanked (for reproducibility checks)."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    drop = [rows[0].index(c) for c in TIMING_COLUMNS if c in rows[0]]
    for row in rows[1:]:
        for i in drop:
            row[i] = ""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()
