import subprocess
import sys

import pytest

from elpg.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from elpg.model import flops_report


def test_flops_prints_both_counts(capsys):
    assert main(["flops", "--n", "128", "--d", "64"]) == EXIT_OK
    attn, gcn = flops_report(128, 64, 0.25)
    out = capsys.readouterr().out.split()
    assert out == ["attention_flops", str(attn), "gcn_flops", str(gcn)]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "elpg", "flops", "--n", "16", "--d", "8"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "gcn_flops" in proc.stdout


@pytest.mark.parametrize("value", ["-250", "abc", "0"])
def test_bad_fs_names_the_flag(tmp_path, capsys, value):
    assert main(["synth", "--out", str(tmp_path), "--fs", value]) == EXIT_CONFIG
    assert "--fs" in capsys.readouterr().err


def test_fs_below_band_edge_names_the_flag(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--fs", "40"]) == EXIT_CONFIG
    assert "--fs" in capsys.readouterr().err


def test_unknown_flag(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--bogus"]) == EXIT_CONFIG
    assert "--bogus" in capsys.readouterr().err


def test_missing_command(capsys):
    assert main([]) == EXIT_CONFIG


def _synth(out, seed=7):
    return main(["synth", "--out", str(out), "--seed", str(seed), "--n-per-class", "3",
                 "--channels", "9", "--duration", "30"])


def test_synth_is_reproducible(tmp_path, capsys):
    assert _synth(tmp_path / "a") == EXIT_OK
    assert _synth(tmp_path / "b") == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "manifest.csv").read_text() == (b / "manifest.csv").read_text()
    for f in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_extract_reports_corrupt_recording(tmp_path, capsys):
    _synth(tmp_path / "c")
    rec = tmp_path / "c/recordings/S001.eegr"
    rec.write_bytes(rec.read_bytes()[:64])
    capsys.readouterr()
    code = main(["extract", "--out", str(tmp_path / "run"), "--manifest", str(tmp_path / "c/manifest.csv")])
    captured = capsys.readouterr()
    assert code == EXIT_DATA
    assert "S001: FAILED" in captured.err
    assert "5 ok, 1 failed" in captured.out


def test_extract_then_train_writes_under_out(tmp_path, capsys):
    _synth(tmp_path / "c")
    out = tmp_path / "run"
    manifest = str(tmp_path / "c/manifest.csv")
    assert main(["extract", "--out", str(out), "--manifest", manifest]) == EXIT_OK
    assert "0 cache hits" in capsys.readouterr().out
    before = {p for p in tmp_path.rglob("*")}
    code = main(["train", "--out", str(out), "--manifest", manifest, "--folds", "3",
                 "--max-epochs", "1", "--batch-size", "8"])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert text.splitlines()[0].split()[:3] == ["variant", "fold", "Acc"]
    assert "ELPG-DTFS" in text
    new = {p for p in tmp_path.rglob("*")} - before
    assert new and all(out in p.parents for p in new)
    assert (out / "results.txt").is_file() and (out / "results.csv").is_file()


def test_train_missing_manifest(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path), "--manifest", str(tmp_path / "none.csv")])
    assert code == EXIT_DATA
