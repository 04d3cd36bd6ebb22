"""Command-line pipeline: data, extractor and model training, sampling,
evaluation, perturbation sweeps and latency benchmarks.

Configuration is an INI file. Every key has a default (see ``DEFAULTS``);
unknown sections or keys are rejected with their line number. The effective
configuration is echoed next to the outputs as ``<command>.config.ini``.

Seeds: a single global seed is expanded into independent per-component
subseeds by ``subseed(seed, name)`` (``SeedSequence([seed, crc32(name)])``),
so changing, say, the extractor seed never shifts data generation.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import os
import platform
import subprocess
import sys
import time
import zlib
from pathlib import Path

import numpy as np
import torch

from . import __version__, checkpoint
from .data import DataError, PairedDataset, SyntheticConfig, concat, fit_norm, generate_synthetic, read_csv, split, write_csv
from .denoiser import ModelConfig
from .diffusion import NumericError, linear_schedule
from .extractors import ExtractorConfig, train_extractors
from .harness.bench import bench_inference
from .harness.dtw import paired_dtw
from .harness.histogram import histogram_compare
from .harness.perturb import KINDS, PerturbationSpec, sensitivity_curve
from .harness.tstr import sample_labels, train_tstr, tstr_auc
from .metric import MatrixSqrtError, ftsd, jftsd, metric_report
from .training import (
    TrainConfig, generate, load_extractor, load_model, save_extractor, save_model, set_deterministic,
    train_time_weaver,
)

log = logging.getLogger("timeweaver")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4, 5
SPLITS = ("train", "val", "test")

DEFAULTS: dict[str, dict[str, str]] = {
    "data": {
        "source": "synthetic",          # or a path to a CSV file
        "cardinalities": "",            # CSV only; empty means inferred
        "n_samples": "2000",
        "horizon": "96",
        "switch_policy": "half",
        "families": "sine,triangle",
        "freq_lo": "2.0",
        "freq_hi": "6.0",
        "amp_lo": "0.5",
        "amp_hi": "1.0",
        "noise_std": "0.05",
        "min_segment": "8",
        "norm": "minmax",
        "ratios": "0.8,0.1,0.1",
    },
    "schedule": {"beta1": "1e-4", "betaT": "0.1", "T": "200"},
    "denoiser": {"residual_layers": "2", "d_meta": "64", "heads": "4", "ff_dim": "64"},
    "encoder": {"heads": "4", "layers": "2"},
    "train": {"epochs": "100", "batch_size": "32", "lr": "1e-4", "max_seconds": ""},
    "extractor": {
        "patch_len": "64", "n_patch": "2", "d_emb": "48", "d_model": "64", "heads": "4", "layers": "3",
        "dropout": "0.05", "stride_every": "3", "batch_size": "16", "lr": "1e-4", "init_temperature": "0.07",
        "epochs": "10", "train_on": "all",
    },
    "sample": {"split": "train,val,test", "batch": "256"},
    "eval": {
        "tag": "test", "patch_seed": "0", "tstr_target": "0", "tstr_epochs": "100", "tstr_lr": "1e-4",
        "hist_bins": "50", "dtw_pairs": "100",
    },
    "perturb": {
        "split": "test",
        "kinds": ",".join(KINDS),
        "gaussian_noise": "0,0.1,0.25,0.5,1.0",
        "time_warp": "0,0.25,0.5,0.75,1.0",
        "impute": "0,0.25,0.5,0.75,1.0",
        "label_flip": "0,0.25,0.5,0.75,1.0",
    },
    "bench": {"repeats": "10", "n_samples": "8", "split": "test"},
}


class ConfigError(ValueError):
    """Malformed or unknown configuration."""


# ---------------------------------------------------------------------------
# configuration

class RunConfig:
    """Sectioned key/value configuration with typed getters that report line numbers."""

    def __init__(self, text: str = "", source: str = "<defaults>"):
        self.source = source
        self.lines: dict[tuple[str, str], int] = {}
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError(f"{source}: {e}") from None
        self._locate(text)
        self.values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"{source}:{self.lines.get((section, ''), '?')}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(
                        f"{source}:{self.lines.get((section, key), '?')}: unknown key {key!r} in [{section}]"
                    )
                self.values[section][key] = value.strip()

    def _locate(self, text: str) -> None:
        section = None
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                self.lines[(section, "")] = no
            elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
                key = line.split("=", 1)[0].split(":", 1)[0].strip()
                self.lines.setdefault((section, key), no)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls(text, str(path))

    def _where(self, section: str, key: str) -> str:
        no = self.lines.get((section, key))
        return f"{self.source}:{no}" if no else f"[{section}] {key}"

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def _convert(self, section, key, fn, what):
        raw = self.get(section, key)
        try:
            return fn(raw)
        except ValueError:
            raise ConfigError(f"{self._where(section, key)}: {key}={raw!r} is not {what}") from None

    def int(self, section, key) -> int:
        return self._convert(section, key, int, "an integer")

    def float(self, section, key) -> float:
        return self._convert(section, key, float, "a number")

    def optional_float(self, section, key):
        return None if self.get(section, key) == "" else self.float(section, key)

    def floats(self, section, key) -> tuple[float, ...]:
        return self._convert(section, key, lambda s: tuple(float(v) for v in s.split(",") if v.strip()), "a number list")

    def ints(self, section, key) -> tuple[int, ...]:
        return self._convert(section, key, lambda s: tuple(int(v) for v in s.split(",") if v.strip()), "an integer list")

    def names(self, section, key) -> tuple[str, ...]:
        return tuple(v.strip() for v in self.get(section, key).split(",") if v.strip())

    def choice(self, section, key, options) -> str:
        v = self.get(section, key)
        if v not in options:
            raise ConfigError(f"{self._where(section, key)}: {key}={v!r} must be one of {', '.join(options)}")
        return v

    def dumps(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_dict(self.values)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]


def subseed(seed: int, name: str) -> int:
    """Independent 32-bit seed for component ``name`` derived from the global seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# files and manifests

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, data: str | bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_bytes(data.encode("utf-8"))
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_json(path: Path, obj: dict) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    side = Path(str(path) + ".manifest.json")
    if not side.exists():
        return {}
    return json.loads(side.read_text(encoding="utf-8"))


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


class Run:
    """Bookkeeping for one command invocation: outputs, sidecars and the run manifest."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, seed: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.start = time.time()
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / f"{command}.config.ini", f"# seed = {seed}\n# config_checksum = {cfg.checksum()}\n" + cfg.dumps())

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing input {path}")
        self.inputs[str(path)] = _sha256(path)
        return path

    def artifact(self, path: Path, **extra) -> None:
        meta = {"producer": self.command, "config_checksum": self.cfg.checksum(), "seed": self.seed}
        meta.update(extra)
        _write_json(Path(str(path) + ".manifest.json"), meta)
        self.outputs.append(str(path))

    def finish(self) -> None:
        _write_json(self.out / f"{self.command}.run.json", {
            "command": self.command,
            "config_checksum": self.cfg.checksum(),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "versions": {
                "timeweaver": __version__,
                "checkpoint_format": checkpoint.FORMAT_VERSION,
                "torch": torch.__version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "build_id": _build_id(),
            "wall_clock_seconds": round(time.time() - self.start, 3),
        })


def _write_rows(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)] + [",".join(_cell(v) for v in r) for r in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


# ---------------------------------------------------------------------------
# SVG

def _svg_frame(title: str, xlabel: str, ylabel: str, data_rows: list[str], body: list[str]) -> str:
    comment = "\n".join(data_rows).replace("--", "- -")
    return "\n".join([
        '<svg xmlns="http://www.w3.org/2000/svg" width="480" height="320" viewBox="0 0 480 320">',
        f"<!-- data\n{comment}\n-->",
        '<rect width="480" height="320" fill="white"/>',
        '<line x1="60" y1="270" x2="460" y2="270" stroke="black"/>',
        '<line x1="60" y1="30" x2="60" y2="270" stroke="black"/>',
        f'<text x="260" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="260" y="305" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="15" y="150" font-size="12" transform="rotate(-90 15 150)" text-anchor="middle">{ylabel}</text>',
        *body,
        "</svg>",
        "",
    ])


def _scale(values, lo_px, hi_px):
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    return lo_px + (v - lo) / span * (hi_px - lo_px), lo, hi


def svg_line(path: Path, xs, ys, title: str, xlabel: str, ylabel: str) -> None:
    px, xlo, xhi = _scale(xs, 60, 460)
    py, ylo, yhi = _scale(ys, 270, 30)
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    body = [
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>',
        *(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="steelblue"/>' for a, b in zip(px, py)),
        f'<text x="60" y="285" font-size="10">{xlo:.3g}</text>',
        f'<text x="460" y="285" font-size="10" text-anchor="end">{xhi:.3g}</text>',
        f'<text x="55" y="270" font-size="10" text-anchor="end">{ylo:.3g}</text>',
        f'<text x="55" y="35" font-size="10" text-anchor="end">{yhi:.3g}</text>',
    ]
    rows = [f"{xlabel},{ylabel}"] + [f"{_cell(a)},{_cell(b)}" for a, b in zip(xs, ys)]
    _atomic_write(path, _svg_frame(title, xlabel, ylabel, rows, body))


def svg_bars(path: Path, edges, p_real, p_gen, title: str) -> None:
    n = len(p_real)
    top = max(float(np.max(p_real)), float(np.max(p_gen)), 1e-12)
    w = 400.0 / n
    body = []
    for i in range(n):
        for j, (p, colour) in enumerate(((p_real[i], "steelblue"), (p_gen[i], "darkorange"))):
            h = 240.0 * float(p) / top
            body.append(
                f'<rect x="{60 + i * w + j * w / 2:.2f}" y="{270 - h:.2f}" width="{w / 2:.2f}" height="{h:.2f}" '
                f'fill="{colour}" fill-opacity="0.8"/>'
            )
    body.append('<text x="400" y="45" font-size="10" fill="steelblue">real</text>')
    body.append('<text x="400" y="58" font-size="10" fill="darkorange">generated</text>')
    rows = ["bin_left,bin_right,p_real,p_gen"] + [
        f"{_cell(edges[i])},{_cell(edges[i + 1])},{_cell(p_real[i])},{_cell(p_gen[i])}" for i in range(n)
    ]
    _atomic_write(path, _svg_frame(title, "value", "probability", rows, body))


# ---------------------------------------------------------------------------
# shared helpers

def _data_dir(args) -> Path:
    return Path(args.data) if args.data else Path(args.out) / "data"


def _load_split(run: Run, args, name: str) -> PairedDataset:
    path = run.input(_data_dir(args) / f"{name}.csv")
    man = read_manifest(path)
    cards = man.get("cardinalities")
    return read_csv(path, cards, split=name)


def _load_splits(run: Run, args) -> dict[str, PairedDataset]:
    return {s: _load_split(run, args, s) for s in SPLITS}


def _load_any(run: Run, path, cardinalities=None, split_name="all") -> tuple[PairedDataset, dict]:
    path = run.input(path)
    man = read_manifest(path)
    cards = man.get("cardinalities", cardinalities)
    tag = man.get("split")
    return read_csv(path, cards, split=tag if tag in SPLITS else split_name), man


def _model_config(cfg: RunConfig, ds: PairedDataset) -> ModelConfig:
    try:
        return ModelConfig(
            n_channels=ds.n_channels, cardinalities=ds.cardinalities, n_cont=ds.n_cont,
            d_meta=cfg.int("denoiser", "d_meta"), heads=cfg.int("denoiser", "heads"),
            residual_layers=cfg.int("denoiser", "residual_layers"), ff_dim=cfg.int("denoiser", "ff_dim"),
            encoder_heads=cfg.int("encoder", "heads"), encoder_layers=cfg.int("encoder", "layers"),
            T=cfg.int("schedule", "T"),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[denoiser]/[encoder]: {e}") from None


def _extractor_config(cfg: RunConfig, ds: PairedDataset) -> ExtractorConfig:
    s = "extractor"
    try:
        return ExtractorConfig(
            n_channels=ds.n_channels, cardinalities=ds.cardinalities, n_cont=ds.n_cont,
            patch_len=cfg.int(s, "patch_len"), n_patch=cfg.int(s, "n_patch"), d_emb=cfg.int(s, "d_emb"),
            d_model=cfg.int(s, "d_model"), heads=cfg.int(s, "heads"), layers=cfg.int(s, "layers"),
            dropout=cfg.float(s, "dropout"), stride_every=cfg.int(s, "stride_every"),
            batch_size=cfg.int(s, "batch_size"), lr=cfg.float(s, "lr"),
            init_temperature=cfg.float(s, "init_temperature"),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[extractor]: {e}") from None


def _schedule(cfg: RunConfig):
    try:
        return linear_schedule(cfg.float("schedule", "beta1"), cfg.float("schedule", "betaT"), cfg.int("schedule", "T"))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[schedule]: {e}") from None


def _check_compatible(ds: PairedDataset, config, what: str, manifest: dict) -> None:
    if (ds.n_channels, tuple(ds.cardinalities), ds.n_cont) != (
        config.n_channels, tuple(config.cardinalities), config.n_cont
    ):
        raise checkpoint.CheckpointError(
            f"{what} is incompatible with the data.\n"
            f"  checkpoint manifest: {json.dumps(manifest, sort_keys=True)}\n"
            f"  data: F={ds.n_channels} cardinalities={list(ds.cardinalities)} K_cont={ds.n_cont}"
        )


def _loss_csv(run: Run, path: Path, history) -> None:
    _write_rows(path, ["epoch", "loss"], [(i + 1, v) for i, v in enumerate(history)])
    run.artifact(path)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(run: Run, args) -> None:
    cfg = run.cfg
    source = cfg.get("data", "source")
    ratios = cfg.floats("data", "ratios")
    if len(ratios) != 3:
        raise ConfigError(f"{cfg._where('data', 'ratios')}: need three split ratios")
    if source == "synthetic":
        fam = cfg.names("data", "families")
        sc = SyntheticConfig(
            n_samples=cfg.int("data", "n_samples"), horizon=cfg.int("data", "horizon"),
            seed=subseed(run.seed, "data"), families=fam,
            freq_range=(cfg.float("data", "freq_lo"), cfg.float("data", "freq_hi")),
            amplitude_range=(cfg.float("data", "amp_lo"), cfg.float("data", "amp_hi")),
            noise_std=cfg.float("data", "noise_std"), switch_policy=cfg.get("data", "switch_policy"),
            min_segment=cfg.int("data", "min_segment"),
        )
        ds = generate_synthetic(sc)
    else:
        cards = cfg.ints("data", "cardinalities") or None
        ds = read_csv(run.input(source), cards)
    parts = split(ds, ratios, seed=subseed(run.seed, "split"))
    out = Path(args.out) / "data"
    out.mkdir(parents=True, exist_ok=True)
    for part in parts:
        path = out / f"{part.split}.csv"
        write_csv(part, path)
        run.artifact(path, kind="dataset", split=part.split, metadata_split=part.split,
                     cardinalities=list(part.cardinalities), n_samples=len(part))
    log.info("wrote %s", ", ".join(f"{p.split}={len(p)}" for p in parts))


def cmd_train_extractors(run: Run, args) -> None:
    cfg = run.cfg
    parts = _load_splits(run, args)
    norm = fit_norm(parts["train"], cfg.choice("data", "norm", ("minmax", "zscore")))
    on = cfg.choice("extractor", "train_on", ("all", "train"))
    ds = norm.apply(concat(list(parts.values())) if on == "all" else parts["train"])
    ecfg = _extractor_config(cfg, ds)
    seed = subseed(run.seed, "extractor")
    model, history = train_extractors(ds, ecfg, cfg.int("extractor", "epochs"), seed=seed, log_every=1)
    path = Path(args.out) / "extractor.ckpt"
    save_extractor(path, model, norm, seed, extra={"train_on": on})
    run.artifact(path, kind="extractor")
    _loss_csv(run, Path(args.out) / "extractor_loss.csv", history)


def cmd_train_model(run: Run, args) -> None:
    cfg = run.cfg
    train = _load_split(run, args, "train")
    norm = fit_norm(train, cfg.choice("data", "norm", ("minmax", "zscore")))
    ds = norm.apply(train)
    mcfg = _model_config(cfg, ds)
    schedule = _schedule(cfg)
    tcfg = TrainConfig(cfg.int("train", "epochs"), cfg.int("train", "batch_size"), cfg.float("train", "lr"),
                       cfg.optional_float("train", "max_seconds"))
    seed = subseed(run.seed, "model")
    model, history = train_time_weaver(ds, mcfg, schedule, tcfg, seed)
    path = Path(args.out) / "model.ckpt"
    save_model(path, model, schedule, norm, seed)
    run.artifact(path, kind="diffusion")
    _loss_csv(run, Path(args.out) / "model_loss.csv", history)


def cmd_sample(run: Run, args) -> None:
    cfg = run.cfg
    ckpt = run.input(args.checkpoint or Path(args.out) / "model.ckpt")
    model, schedule, norm, manifest = load_model(ckpt)
    if args.metadata:
        meta, man = _load_any(run, args.metadata, manifest["model"]["cardinalities"])
        jobs = [(man.get("metadata_split", man.get("split", "unknown")), meta)]
    else:
        names = cfg.names("sample", "split")
        for name in names:
            if name not in SPLITS:
                raise ConfigError(f"{cfg._where('sample', 'split')}: unknown split {name!r}")
        jobs = [(name, _load_split(run, args, name)) for name in names]
    for meta_split, meta in jobs:
        _check_compatible(meta, model.config, "diffusion checkpoint", manifest)
        seed = subseed(run.seed, f"sample/{meta_split}")
        x = generate(model, norm.apply(meta), schedule, seed, cfg.int("sample", "batch"))
        gen = meta.with_values(x=norm.invert_x(x))
        path = Path(args.out) / f"generated_{meta_split}.csv"
        write_csv(gen, path)
        run.artifact(path, kind="dataset", split="generated", metadata_split=meta_split,
                     cardinalities=list(gen.cardinalities), n_samples=len(gen), checkpoint=_sha256(ckpt))


def _tstr_line(run: Run, args, real: PairedDataset, cards) -> str:
    """Classifier trained on generated train data, checkpointed on generated
    val data, scored on the real evaluation split."""
    cfg = run.cfg
    target = cfg.int("eval", "tstr_target")
    paths = [Path(args.out) / f"generated_{s}.csv" for s in ("train", "val")]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        return f"tstr_auc=skipped (missing {', '.join(missing)}; sample the train and val splits)\n"
    g_train, g_val = (_load_any(run, p, cards)[0] for p in paths)
    try:
        for ds in (g_train, g_val, real):
            sample_labels(ds, target)
    except (DataError, IndexError) as e:
        return f"tstr_auc=skipped ({e})\n"
    clf = train_tstr(g_train, g_val, target, epochs=cfg.int("eval", "tstr_epochs"),
                     lr=cfg.float("eval", "tstr_lr"), seed=subseed(run.seed, "tstr"))
    return f"tstr_auc={format(tstr_auc(clf, real), '.17g')}\ntstr_best_epoch={clf.best_epoch}\n"


def cmd_evaluate(run: Run, args) -> None:
    cfg = run.cfg
    tag = cfg.get("eval", "tag")
    gen_path = args.gen or Path(args.out) / f"generated_{tag}.csv"
    ext, norm, ext_manifest = load_extractor(run.input(args.extractor or Path(args.out) / "extractor.ckpt"))
    gen, gen_man = _load_any(run, gen_path, list(ext.config.cardinalities))
    if tag == "test" and gen_man.get("metadata_split") == "train":
        raise DataError(f"{gen_path} was conditioned on train-split metadata; refusing to report it as 'test'")
    if args.real:
        real, _ = _load_any(run, args.real, list(ext.config.cardinalities))
    else:
        real = _load_split(run, args, tag if tag in SPLITS else "test")
    for ds, what in ((real, "real data"), (gen, "generated data")):
        _check_compatible(ds, ext.config, f"extractor checkpoint vs {what}", ext_manifest)
    if len(real) != len(gen):
        raise DataError(f"real ({len(real)}) and generated ({len(gen)}) sets must pair one-to-one")
    rn, gn = norm.apply(real), norm.apply(gen)
    seed = cfg.int("eval", "patch_seed")
    reports = Path(args.out) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    text = f"tag={tag}\n"
    text += metric_report("jftsd", jftsd(rn, gn, ext, seed), len(real), len(gen), ext)
    text += metric_report("ftsd", ftsd(rn, gn, ext, seed), len(real), len(gen), ext)
    n_dtw = min(cfg.int("eval", "dtw_pairs"), len(real))
    d = paired_dtw(rn.x[:n_dtw], gn.x[:n_dtw])
    text += f"dtw_pairs={n_dtw}\ndtw_mean={format(float(d.mean()), '.17g')}\ndtw_median={format(float(np.median(d)), '.17g')}\n"
    text += _tstr_line(run, args, real, list(ext.config.cardinalities))
    path = reports / f"metrics_{tag}.txt"
    _atomic_write(path, text)
    run.artifact(path, kind="report")
    _write_rows(reports / f"dtw_{tag}.csv", ["index", "dtw"], enumerate(d))
    run.artifact(reports / f"dtw_{tag}.csv", kind="report")
    for c, h in enumerate(histogram_compare(real.x, gen.x, cfg.int("eval", "hist_bins"))):
        hp = reports / f"histogram_{tag}_ch{c}.csv"
        _write_rows(hp, ["bin_left", "bin_right", "p_real", "p_gen"],
                    [(h.edges[i], h.edges[i + 1], h.p_real[i], h.p_gen[i]) for i in range(len(h.p_real))])
        run.artifact(hp, kind="histogram", l1_gap=h.l1_gap)
        svg_bars(hp.with_suffix(".svg"), h.edges, h.p_real, h.p_gen, f"channel {c} (L1 gap {h.l1_gap:.3f})")
        run.artifact(hp.with_suffix(".svg"), kind="plot")
    sys.stdout.write(text)


def cmd_perturb_sweep(run: Run, args) -> None:
    cfg = run.cfg
    ext, norm, ext_manifest = load_extractor(run.input(args.extractor or Path(args.out) / "extractor.ckpt"))
    ds = _load_split(run, args, cfg.choice("perturb", "split", SPLITS))
    _check_compatible(ds, ext.config, "extractor checkpoint", ext_manifest)
    ds = norm.apply(ds)
    seed = subseed(run.seed, "perturb")
    patch_seed = cfg.int("eval", "patch_seed")
    metrics = {
        "jftsd": lambda r, g: jftsd(r, g, ext, patch_seed),
        "ftsd": lambda r, g: ftsd(r, g, ext, patch_seed),
    }
    reports = Path(args.out) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    for kind in cfg.names("perturb", "kinds"):
        if kind not in KINDS:
            raise ConfigError(f"{cfg._where('perturb', 'kinds')}: unknown perturbation {kind!r}")
        try:
            spec = PerturbationSpec(kind, cfg.floats("perturb", kind), seed)
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{cfg._where('perturb', kind)}: {e}") from None
        for name, fn in metrics.items():
            curve = sensitivity_curve(ds, spec, fn, name)
            path = reports / f"{name}_{kind}.csv"
            _write_rows(path, ["level", "value"], zip(curve.levels, curve.values))
            run.artifact(path, kind="sensitivity_curve", metric=name, perturbation=kind)
            svg_line(path.with_suffix(".svg"), curve.levels, curve.values, f"{name} under {kind}", "level", name)
            run.artifact(path.with_suffix(".svg"), kind="plot")
            log.info("%s %s: %s", name, kind, ", ".join(f"{v:.4g}" for v in curve.values))


def cmd_bench(run: Run, args) -> None:
    cfg = run.cfg
    ckpt = run.input(args.checkpoint or Path(args.out) / "model.ckpt")
    model, schedule, norm, manifest = load_model(ckpt)
    ds = _load_split(run, args, cfg.choice("bench", "split", SPLITS))
    _check_compatible(ds, model.config, "diffusion checkpoint", manifest)
    ds = norm.apply(ds.subset(np.arange(min(cfg.int("bench", "n_samples"), len(ds)))))
    stats = bench_inference(model, ds.categorical, ds.continuous.astype(np.float32), schedule,
                            cfg.int("bench", "repeats"), subseed(run.seed, "bench"))
    reports = Path(args.out) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    text = (
        f"n_samples={stats.n_samples}\nrepeats={len(stats.timings)}\nT={schedule.T}\n"
        f"threads={torch.get_num_threads()}\n"
        f"seconds_per_sample_mean={stats.mean:.6g}\nseconds_per_sample_std={stats.std:.6g}\n"
        f"seconds_per_sample_median={stats.median:.6g}\n"
        + "".join(f"run_{i}_seconds={t:.6g}\n" for i, t in enumerate(stats.timings))
    )
    path = reports / "bench.txt"
    _atomic_write(path, text)
    run.artifact(path, kind="latency_report")
    sys.stdout.write(text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-extractors": cmd_train_extractors,
    "train-model": cmd_train_model,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "perturb-sweep": cmd_perturb_sweep,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    common.add_argument("--out", default="run", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="global seed")
    common.add_argument("--threads", type=int, default=None, help="torch intra-op threads")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, deterministic kernels")
    common.add_argument("--data", help="directory holding train/val/test CSVs (default OUT/data)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="timeweaver", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("sample", "bench"):
            sp.add_argument("--checkpoint", help="diffusion checkpoint (default OUT/model.ckpt)")
        if name == "sample":
            sp.add_argument("--metadata", help="CSV whose metadata conditions generation (default: [sample] split)")
        if name in ("evaluate", "perturb-sweep"):
            sp.add_argument("--extractor", help="extractor checkpoint (default OUT/extractor.ckpt)")
        if name == "evaluate":
            sp.add_argument("--real", help="real CSV (default: the [eval] tag split)")
            sp.add_argument("--gen", help="generated CSV (default OUT/generated_<tag>.csv)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.deterministic:
            set_deterministic(1)
        elif args.threads:
            torch.set_num_threads(args.threads)
        run = Run(args.command, cfg, Path(args.out), args.seed)
        COMMANDS[args.command](run, args)
        run.finish()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except checkpoint.CheckpointError as e:
        print(f"incompatible checkpoint: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, MatrixSqrtError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
