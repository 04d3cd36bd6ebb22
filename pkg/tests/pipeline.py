"""Tiny end-to-end CLI pipeline shared by the CLI tests and the acceptance suite."""

from pathlib import Path

from timeweaver.cli import main

TINY_INI = """\
[data]
n_samples = 60
horizon = 32
switch_policy = constant

[schedule]
T = 10

[denoiser]
d_meta = 16
heads = 2
ff_dim = 16
residual_layers = 1

[encoder]
heads = 2
layers = 1

[train]
epochs = 2

[extractor]
patch_len = 16
d_emb = 8
d_model = 16
heads = 2
layers = 2
epochs = 2
batch_size = 8

[eval]
tstr_epochs = 2
dtw_pairs = 4
hist_bins = 10

[perturb]
gaussian_noise = 0,0.5
time_warp = 0,0.5
impute = 0,0.5
label_flip = 0,1

[bench]
repeats = 2
n_samples = 2
"""

COMMANDS = ["gen-data", "train-extractors", "train-model", "sample", "evaluate", "perturb-sweep", "bench"]


def write_config(directory: Path, text: str = TINY_INI) -> Path:
    path = Path(directory) / "tiny.ini"
    path.write_text(text)
    return path


def run_pipeline(out: Path, config: Path, seed: int = 0) -> dict[str, int]:
    codes = {}
    for cmd in COMMANDS:
        codes[cmd] = main([cmd, "--config", str(config), "--out", str(out), "--seed", str(seed), "--deterministic"])
    return codes


def csv_outputs(out: Path) -> dict[str, bytes]:
    out = Path(out)
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*.csv"))}
