"""Config parsing/round-trip and end-to-end CLI runs."""

import os
import subprocess
import sys

import numpy as np
import pytest

from potq.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_config,
    parse_scheme,
    serialize_config,
)
from potq.quantizers import ApotScheme, FloatScheme, PotScheme, UniformScheme

FAST = """
[experiment]
version = 1
name = fast
seed = 3
output_dir = {out}

[dataset]
format = synthetic
classes = 4
train_samples = 96
test_samples = 48
image_size = 8

[model]
conv1_filters = 4
conv2_filters = 6

[sgd]
epochs = 2
float_epochs = 3

[quant]
method = ste
scheme = pot:4
"""


def write_cfg(tmp_path, text=None, **fmt):
    path = tmp_path / "exp.ini"
    path.write_text((text or FAST).format(out=str(tmp_path / "out"), **fmt))
    return str(path)


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "potq.cli", *args],
        capture_output=True, text=True,
    )


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_parse_scheme_variants():
    assert parse_scheme("float") == FloatScheme()
    assert parse_scheme("pot:4") == PotScheme(4)
    assert parse_scheme("uniform:8") == UniformScheme(8)
    assert parse_scheme("apot:4") == ApotScheme()
    with pytest.raises(ConfigError):
        parse_scheme("pot")
    with pytest.raises(ConfigError):
        parse_scheme("pot:99")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[experiment]\nversion = 1\nbogus = 1\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config("[experiment]\nversion = 1\n[nothere]\nx = 1\n")


def test_version_required_and_checked():
    with pytest.raises(ConfigError, match="version"):
        parse_config("[experiment]\nname = x\n")
    with pytest.raises(ConfigError, match="unsupported config version"):
        parse_config("[experiment]\nversion = 2\n")


def test_roundtrip_idempotent():
    cfg = ExperimentConfig(seed=9, scheme="pot:3",
                           scheme_overrides=(("fc", "uniform:8"),))
    text = serialize_config(cfg)
    cfg2 = parse_config(text)
    assert cfg2 == cfg
    assert serialize_config(cfg2) == text


def test_scheme_overrides_parsed():
    cfg = parse_config(
        "[experiment]\nversion = 1\n[quant]\nscheme = pot:4\nscheme.fc = uniform:8\n"
    )
    assert cfg.scheme_overrides == (("fc", "uniform:8"),)


def test_missing_idx_paths_rejected():
    cfg = parse_config("[experiment]\nversion = 1\n[dataset]\nformat = idx\n")
    with pytest.raises(ConfigError, match="paths"):
        cfg.load_datasets()


def test_nonexistent_idx_path_rejected(tmp_path):
    cfg = parse_config(
        "[experiment]\nversion = 1\n[dataset]\nformat = idx\n"
        f"train_images = {tmp_path}/none.idx\ntrain_labels = {tmp_path}/none.idx\n"
        f"test_images = {tmp_path}/none.idx\ntest_labels = {tmp_path}/none.idx\n"
    )
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.load_datasets()


def test_env_var_overrides_output_dir(tmp_path, monkeypatch):
    path = write_cfg(tmp_path)
    monkeypatch.setenv("POTQ_OUTPUT_DIR", "/tmp/elsewhere")
    cfg = load_config(path)
    assert cfg.output_dir == "/tmp/elsewhere"


def test_cli_override_beats_env(tmp_path, monkeypatch):
    path = write_cfg(tmp_path)
    monkeypatch.setenv("POTQ_OUTPUT_DIR", "/tmp/elsewhere")
    cfg = load_config(path, output_dir="/tmp/winner")
    assert cfg.output_dir == "/tmp/winner"


def test_csv_dataset_config_loads(tmp_path):
    rng = np.random.default_rng(4)
    rows = np.column_stack([
        rng.integers(0, 3, size=10),
        rng.uniform(0, 1, size=(10, 64)),
    ])
    np.savetxt(str(tmp_path / "train.csv"), rows, delimiter=",")
    np.savetxt(str(tmp_path / "test.csv"), rows, delimiter=",")
    cfg = parse_config(
        "[experiment]\nversion = 1\n[dataset]\nformat = csv\n"
        f"train_csv = {tmp_path}/train.csv\ntest_csv = {tmp_path}/test.csv\n"
    )
    train, test = cfg.load_datasets()
    assert train.images.shape == (10, 1, 8, 8)
    assert len(test) == 10


def test_idx_dataset_loads(tmp_path):
    from potq.data import save_idx, synthetic_blobs

    ds = synthetic_blobs(20, classes=3, size=8, seed=0)
    images = (ds.images[:, 0] * 255).astype(np.uint8)
    save_idx(str(tmp_path / "tri.idx"), images)
    save_idx(str(tmp_path / "trl.idx"), ds.labels.astype(np.uint8))
    save_idx(str(tmp_path / "tei.idx"), images)
    save_idx(str(tmp_path / "tel.idx"), ds.labels.astype(np.uint8))
    text = (
        "[experiment]\nversion = 1\n[dataset]\nformat = idx\n"
        f"train_images = {tmp_path}/tri.idx\ntrain_labels = {tmp_path}/trl.idx\n"
        f"test_images = {tmp_path}/tei.idx\ntest_labels = {tmp_path}/tel.idx\n"
    )
    cfg = parse_config(text)
    train, test = cfg.load_datasets()
    assert len(train) == 20 and len(test) == 20


# ---------------------------------------------------------------------------
# CLI end to end
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg_path = tmp / "exp.ini"
    out = tmp / "out"
    cfg_path.write_text(FAST.format(out=str(out)))
    r = run_cli("train-float", "-c", str(cfg_path))
    assert r.returncode == 0, r.stderr
    r = run_cli("qat", "-c", str(cfg_path), "--checkpoint", str(out / "float.npz"))
    assert r.returncode == 0, r.stderr
    return {"cfg": str(cfg_path), "out": out}


def test_missing_config_is_config_error():
    r = run_cli("train-float", "-c", "/nonexistent.ini")
    assert r.returncode == 2
    assert "config error" in r.stderr


def test_bad_config_key_is_exit_2(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nversion = 1\nwhat = 1\n")
    r = run_cli("train-float", "-c", str(p))
    assert r.returncode == 2


def test_train_float_outputs(workspace):
    out = workspace["out"]
    assert (out / "float.npz").exists()
    assert (out / "float_metrics.csv").exists()
    assert (out / "float_curves.png").exists()
    header = (out / "float_metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,split,loss,accuracy,lr,zero_fraction"


def test_train_float_deterministic_metrics(tmp_path):
    cfg_path = write_cfg(tmp_path)
    r1 = run_cli("train-float", "-c", cfg_path)
    csv1 = (tmp_path / "out" / "float_metrics.csv").read_bytes()
    r2 = run_cli("train-float", "-c", cfg_path)
    csv2 = (tmp_path / "out" / "float_metrics.csv").read_bytes()
    assert r1.returncode == 0 and r2.returncode == 0
    assert csv1 == csv2


def test_qat_outputs(workspace):
    out = workspace["out"]
    assert (out / "qat_ste.pqt").exists()
    assert (out / "qat_ste_metrics.csv").exists()
    assert (out / "qat_ste_curves.png").exists()
    assert (out / "qat_ste_master.npz").exists()


def test_qat_zero_epochs_snapshot(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("qat", "-c", workspace["cfg"], "--checkpoint", str(out / "float.npz"),
                "--epochs", "0", "--output-dir", str(tmp_path / "snap"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "snap" / "qat_ste.pqt").exists()


def test_qat_alr_variant(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("qat", "-c", workspace["cfg"], "--checkpoint", str(out / "float.npz"),
                "--method", "alr", "--epochs", "1", "--output-dir", str(tmp_path / "alr"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "alr" / "qat_alr.pqt").exists()
    assert (tmp_path / "alr" / "qat_alr_metrics.csv").exists()


def test_eval_float_and_integer(workspace):
    out = workspace["out"]
    r = run_cli("eval", "-c", workspace["cfg"], "--model", str(out / "qat_ste.pqt"),
                "--path", "float")
    assert r.returncode == 0 and "float path: accuracy" in r.stdout
    r = run_cli("eval", "-c", workspace["cfg"], "--model", str(out / "qat_ste.pqt"),
                "--path", "integer")
    assert r.returncode == 0 and "saturation events" in r.stdout


def test_eval_corrupt_magic_exit_3(workspace, tmp_path):
    out = workspace["out"]
    blob = bytearray((out / "qat_ste.pqt").read_bytes())
    blob[0:4] = b"XXXX"
    bad = tmp_path / "corrupt.pqt"
    bad.write_bytes(bytes(blob))
    r = run_cli("eval", "-c", workspace["cfg"], "--model", str(bad))
    assert r.returncode == 3
    assert "format error" in r.stderr


def test_pack_command(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("pack", "-c", workspace["cfg"], "--checkpoint", str(out / "float.npz"),
                "-O", str(tmp_path / "p.pqt"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "p.pqt").exists()


def test_mac_report_contents_and_figure(tmp_path):
    r = run_cli("mac-report", "-o", str(tmp_path / "mac"))
    assert r.returncode == 0
    assert "PoT 4x8, 39, 25" in r.stdout
    assert "Uniform 8x8, 87, 39" in r.stdout
    assert "PASS" in r.stdout
    assert (tmp_path / "mac" / "mac_report.csv").exists()
    assert (tmp_path / "mac" / "mac_report.png").exists()


def test_sweep_pruning(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("sweep-pruning", "-c", workspace["cfg"],
                "--checkpoint", str(out / "qat_ste_master.npz"),
                "--pf", "0,0.5,1,2", "--output-dir", str(tmp_path / "sweep"))
    assert r.returncode == 0, r.stderr
    lines = (tmp_path / "sweep" / "pruning_sweep.csv").read_text().splitlines()
    assert lines[0] == "pf,zero_fraction,accuracy"
    rows = [line.split(",") for line in lines[1:]]
    fractions = [float(r[1]) for r in rows]
    assert fractions == sorted(fractions)
    assert float(rows[0][1]) == 0.0  # pf=0 prunes nothing
    assert (tmp_path / "sweep" / "pruning_sweep.png").exists()


def test_sweep_pf0_matches_eval(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("pack", "-c", workspace["cfg"], "--checkpoint", str(out / "qat_ste_master.npz"),
                "-O", str(tmp_path / "m.pqt"))
    assert r.returncode == 0
    r_eval = run_cli("eval", "-c", workspace["cfg"], "--model", str(tmp_path / "m.pqt"))
    acc_eval = float(r_eval.stdout.split("accuracy")[1].split()[0])
    r_sweep = run_cli("sweep-pruning", "-c", workspace["cfg"],
                      "--checkpoint", str(out / "qat_ste_master.npz"),
                      "--pf", "0", "--output-dir", str(tmp_path / "sweep0"))
    line = (tmp_path / "sweep0" / "pruning_sweep.csv").read_text().splitlines()[1]
    acc_sweep = float(line.split(",")[2])
    assert acc_sweep == pytest.approx(acc_eval, abs=1e-4)  # stdout prints 4 decimals


def test_size_report(workspace, tmp_path):
    out = workspace["out"]
    r = run_cli("size-report", "--model", str(out / "qat_ste.pqt"),
                "-o", str(tmp_path / "size"))
    assert r.returncode == 0
    assert "compression ratio" in r.stdout
    assert (tmp_path / "size" / "size_report.csv").exists()
    assert (tmp_path / "size" / "size_summary.csv").exists()
    assert (tmp_path / "size" / "size_report.png").exists()


def test_mixed_scheme_honored(tmp_path):
    text = FAST + "scheme.fc = uniform:8\n"
    cfg_path = tmp_path / "mixed.ini"
    out = tmp_path / "out"
    cfg_path.write_text(text.format(out=str(out)))
    r = run_cli("train-float", "-c", str(cfg_path))
    assert r.returncode == 0, r.stderr
    r = run_cli("qat", "-c", str(cfg_path), "--checkpoint", str(out / "float.npz"))
    assert r.returncode == 0, r.stderr
    from potq.packing import PackedModel

    packed = PackedModel.load(str(out / "qat_ste.pqt"))
    assert isinstance(packed.records["conv1"].q.scheme, PotScheme)
    assert isinstance(packed.records["fc"].q.scheme, UniformScheme)
