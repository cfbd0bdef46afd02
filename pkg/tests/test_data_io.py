import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elpg.data_io import (
    MAGIC,
    CohortConfig,
    ElectrodeLayout,
    FeatureCache,
    ManifestRow,
    SubjectManifest,
    band_limited_noise,
    cache_key,
    decode_recording,
    encode_recording,
    generate_synthetic_cohort,
    load_cohort,
    load_manifest,
    load_recording,
    prepare_subject,
    spherical_cap_layout,
    synthesize_subject,
    write_recording,
)
from elpg.errors import ConfigError, FormatError, LengthError, SchemaError, ValidationError
from elpg.signal import PreprocessParams, Recording


@pytest.fixture(scope="module")
def small_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    cfg = CohortConfig(n_per_class=2, n_channels=9, duration_sec=30.0, seed=11)
    return generate_synthetic_cohort(cfg, out)


# ------------------------------------------------------------- recordings


@settings(max_examples=25, deadline=None)
@given(n_ch=st.integers(1, 6), n_s=st.integers(0, 50), fs=st.floats(1.0, 5000.0), seed=st.integers(0, 999))
def test_recording_round_trip(n_ch, n_s, fs, seed):
    x = np.random.default_rng(seed).normal(size=(n_ch, n_s)) * 100
    y, fs2 = decode_recording(encode_recording(x, fs))
    np.testing.assert_array_equal(x, y)
    assert fs2 == fs


def test_recording_header_layout():
    buf = encode_recording(np.ones((2, 3)), 250.0)
    assert buf[:4] == MAGIC and buf[4] == 1
    assert len(buf) == 4 + 1 + 8 + 8 + 8 + 8 * 6


def test_recording_rejects_bad_bytes():
    buf = encode_recording(np.ones((2, 3)), 250.0)
    with pytest.raises(LengthError):
        decode_recording(buf[:-1])
    with pytest.raises(LengthError):
        decode_recording(buf + b"\0")
    with pytest.raises(LengthError):
        decode_recording(buf[:10])
    with pytest.raises(FormatError, match="magic"):
        decode_recording(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="version"):
        decode_recording(buf[:4] + b"\x07" + buf[5:])


def test_load_recording_checks_layout(tmp_path):
    write_recording(tmp_path / "r.eegr", np.ones((3, 10)), 100.0)
    with pytest.raises(ValidationError, match="3 channels"):
        load_recording(tmp_path / "r.eegr", spherical_cap_layout(9))
    rec = load_recording(tmp_path / "r.eegr", spherical_cap_layout(3), "S1", 1)
    assert (rec.subject_id, rec.label, rec.fs) == ("S1", 1, 100.0)


# ---------------------------------------------------------------- layouts


def test_layout_text_round_trip(tmp_path):
    lay = spherical_cap_layout(16)
    lay.save(tmp_path / "l.txt")
    back = ElectrodeLayout.load(tmp_path / "l.txt")
    assert back.names == lay.names
    np.testing.assert_array_equal(back.coords, lay.coords)


def test_layout_schema():
    with pytest.raises(SchemaError, match="unit"):
        ElectrodeLayout.from_text("A 0 0 0\nB 1 0 0\n")
    with pytest.raises(SchemaError):
        ElectrodeLayout.from_text("# unit: cm\nA 0 0 0\n")
    with pytest.raises(SchemaError, match="line 2"):
        ElectrodeLayout.from_text("# unit: mm\nA 0 0\n")
    with pytest.raises(SchemaError, match="distinct"):
        ElectrodeLayout.from_text("# unit: mm\nA 0 0 0\nB 0 0 0\n")


@pytest.mark.parametrize("n", [9, 16, 32, 64])
def test_cap_layout_geometry(n):
    c = spherical_cap_layout(n).coords
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 90.0, atol=1e-5)
    assert np.all(np.diff(c[:, 1]) <= 0)  # front to back
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    np.testing.assert_array_equal(d, d.T)
    assert d[~np.eye(n, dtype=bool)].min() > 1.0
    # triangle inequality on a sample of triples
    rng = np.random.default_rng(n)
    i, j, k = rng.integers(0, n, (3, 500))
    assert np.all(d[i, k] <= d[i, j] + d[j, k] + 1e-9)


# -------------------------------------------------------------- manifests


def test_manifest_round_trip(tmp_path):
    m = SubjectManifest([ManifestRow("A", 0, "a.eegr"), ManifestRow("B", 1, "b.eegr")], 250.0, 16, 60.0)
    back = SubjectManifest.from_text(m.to_text())
    assert back.rows == m.rows and (back.fs, back.n_channels, back.duration) == (250.0, 16, 60.0)


@pytest.mark.parametrize("text, match", [
    ("# fs=250\n# n_channels=9\n# duration=60\nid,label,path\n", "header"),
    ("# fs=250\n# n_channels=9\n# duration=60\nsubject_id,label,path\nA,2,a\n", "label"),
    ("# fs=250\n# n_channels=9\n# duration=60\nsubject_id,label,path\nA,0\n", "3 fields"),
    ("# fs=250\n# n_channels=9\n# duration=60\nsubject_id,label,path\nA,0,a\nA,1,b\n", "unique"),
    ("# fs=250\nsubject_id,label,path\nA,0,a\n", "metadata"),
    ("# fs=250\n", "no header"),
])
def test_manifest_schema_errors(text, match):
    with pytest.raises(SchemaError, match=match):
        SubjectManifest.from_text(text)


def test_manifest_missing_file(small_cohort, tmp_path):
    text = small_cohort.read_text().replace("recordings/S001.eegr", "recordings/nope.eegr")
    (tmp_path / "m.csv").write_text(text)
    (tmp_path / "recordings").mkdir()
    for sid in ("S000", "S002", "S003"):
        (tmp_path / f"recordings/{sid}.eegr").write_bytes((small_cohort.parent / f"recordings/{sid}.eegr").read_bytes())
    with pytest.raises(ValidationError, match="row 2 .*S001.*nope"):
        load_manifest(tmp_path / "m.csv")
    assert len(load_manifest(tmp_path / "m.csv", check_files=False).rows) == 4


# -------------------------------------------------------------- generator


def test_generator_is_deterministic(tmp_path):
    cfg = CohortConfig(n_per_class=1, n_channels=9, duration_sec=5.0, seed=3)
    a = generate_synthetic_cohort(cfg, tmp_path / "a")
    b = generate_synthetic_cohort(cfg, tmp_path / "b")
    assert a.read_text() == b.read_text()
    for name in ("recordings/S000.eegr", "recordings/S001.eegr", "layout.txt", "parcellation.txt"):
        assert (a.parent / name).read_bytes() == (b.parent / name).read_bytes()


@pytest.mark.parametrize("kw", [{"fs": 40.0}, {"n_channels": 8}, {"alpha_power_ratio": -1.0},
                                {"base_coupling": 0.8, "coupling_delta": 0.3}, {"n_per_class": 0}])
def test_generator_config_errors(kw):
    with pytest.raises(ConfigError):
        CohortConfig(**kw).validate()


def test_band_limited_noise_spectrum():
    rng = np.random.default_rng(0)
    x = band_limited_noise(rng, (2, 5000), 8.0, 13.0, 250.0)
    np.testing.assert_allclose(x.std(axis=-1), 1.0, rtol=1e-12)
    f = np.fft.rfftfreq(5000, 1 / 250.0)
    p = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    assert p[:, (f < 8) | (f > 13)].max() < 1e-18 * p.max()


def _frontal_alpha_ratio(ratio, n=6):
    cfg = CohortConfig(n_channels=12, duration_sec=20.0, alpha_power_ratio=ratio, subject_jitter=0.0)
    rng = np.random.default_rng(42)
    f = np.fft.rfftfreq(int(cfg.duration_sec * cfg.fs), 1 / cfg.fs)
    alpha = (f >= 8) & (f <= 13)
    power = {0: [], 1: []}
    for label in (0, 1):
        for _ in range(n):
            x = synthesize_subject(rng, cfg, label)[:3]
            power[label].append((np.abs(np.fft.rfft(x, axis=-1))[:, alpha] ** 2).sum())
    return np.mean(power[1]) / np.mean(power[0])


def test_alpha_effect_grows_with_ratio():
    r = [_frontal_alpha_ratio(k) for k in (1.0, 2.0, 3.0)]
    assert r[0] < r[1] < r[2]
    assert r[0] == pytest.approx(1.0, abs=0.05)
    assert r[2] == pytest.approx(3.0, rel=0.05)


def test_coupling_raises_cross_channel_correlation():
    cfg = CohortConfig(n_channels=10, duration_sec=20.0, coupling_delta=0.4, alpha_power_ratio=1.0)
    rng = np.random.default_rng(7)
    off = ~np.eye(10, dtype=bool)
    mean_r = [np.corrcoef(synthesize_subject(rng, cfg, y))[off].mean() for y in (0, 1)]
    assert mean_r[1] - mean_r[0] == pytest.approx(0.4, abs=0.05)


# ------------------------------------------------------------------ cache


def _rec(small_cohort, sid="S000"):
    raw = (small_cohort.parent / f"recordings/{sid}.eegr").read_bytes()
    samples, fs = decode_recording(raw)
    return raw, Recording(samples, fs, spherical_cap_layout(9).coords, sid, 0)


def test_cache_key_sensitivity(small_cohort):
    raw, _ = _rec(small_cohort)
    p = PreprocessParams()
    k = cache_key(raw, p, "S000")
    assert k == cache_key(raw, p, "S000")
    assert k != cache_key(raw, p, "S001")
    assert k != cache_key(raw, PreprocessParams(overlap=0.25), "S000")
    assert k != cache_key(raw[:-1] + b"\1", p, "S000")


def test_cache_miss_then_hit(small_cohort, tmp_path):
    raw, rec = _rec(small_cohort)
    cache = FeatureCache(tmp_path / "c")
    first, hit1 = cache.get_or_compute(raw, rec, PreprocessParams())
    second, hit2 = cache.get_or_compute(raw, rec, PreprocessParams())
    assert (hit1, hit2) == (False, True)
    np.testing.assert_array_equal(first.de, second.de)
    np.testing.assert_array_equal(first.mi, second.mi)
    np.testing.assert_array_equal(first.seed, second.seed)
    ref = prepare_subject(rec)
    np.testing.assert_array_equal(first.de, ref.de)


def test_cache_params_change_is_a_miss(small_cohort, tmp_path):
    raw, rec = _rec(small_cohort)
    cache = FeatureCache(tmp_path / "c")
    cache.get_or_compute(raw, rec, PreprocessParams())
    _, hit = cache.get_or_compute(raw, rec, PreprocessParams(window_sec=2.0))
    assert not hit
    assert len(list((tmp_path / "c").glob("S000-*.feat"))) == 1


def test_corrupt_cache_is_recomputed(small_cohort, tmp_path, caplog):
    raw, rec = _rec(small_cohort)
    cache = FeatureCache(tmp_path / "c")
    good, _ = cache.get_or_compute(raw, rec, PreprocessParams())
    feat = next((tmp_path / "c").glob("*.feat"))
    feat.write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING):
        again, hit = cache.get_or_compute(raw, rec, PreprocessParams())
    assert not hit and "corrupt" in caplog.text
    np.testing.assert_array_equal(good.de, again.de)


def test_load_cohort_uses_cache_and_collects_failures(small_cohort, tmp_path):
    first = load_cohort(small_cohort, cache_dir=tmp_path / "c")
    assert len(first.subjects) == 4 and first.cache_hits == 0 and not first.failures
    assert first.subjects[0].de.shape == (4, 9, 4)
    assert first.subjects[0].mi.shape == (4, 9, 6)
    assert [s.label for s in first.subjects] == [0, 0, 1, 1]
    again = load_cohort(small_cohort, cache_dir=tmp_path / "c")
    assert again.cache_hits == 4

    work = tmp_path / "broken"
    work.mkdir()
    for name in ("manifest.csv", "layout.txt", "parcellation.txt"):
        (work / name).write_text((small_cohort.parent / name).read_text())
    (work / "recordings").mkdir()
    for sid in ("S000", "S001", "S002", "S003"):
        data = (small_cohort.parent / f"recordings/{sid}.eegr").read_bytes()
        (work / f"recordings/{sid}.eegr").write_bytes(data[:100] if sid == "S002" else data)
    cohort = load_cohort(work / "manifest.csv")
    assert list(cohort.failures) == ["S002"]
    assert [s.subject_id for s in cohort.subjects] == ["S000", "S001", "S003"]
