import json
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpath_av.datasets import (
    MIXTURE_MU,
    MixtureSpec,
    VisualFeatures,
    draw_sisnr,
    gen_synthetic_visual,
    load_example,
    read_avf,
    read_manifest,
    read_wav,
    solve_interference_gain,
    synth_mixture,
    synth_speech,
    write_avf,
    write_manifest,
    write_wav,
)
from dualpath_av.metrics import si_snr


# -- WAV --------------------------------------------------------------------------

def test_wav_square_wave_roundtrip(tmp_path):
    t = np.arange(16000)
    x = np.where((t // 40) % 2 == 0, 0.5, -0.5)
    write_wav(tmp_path / "sq.wav", x)
    y, rate = read_wav(tmp_path / "sq.wav")
    assert rate == 16000 and y.shape == (16000,)
    assert np.max(np.abs(y - x)) <= 1 / 32768


def test_wav_silence_exact(tmp_path):
    write_wav(tmp_path / "z.wav", np.zeros(100))
    y, _ = read_wav(tmp_path / "z.wav")
    assert not y.any()


def test_wav_eight_seconds(tmp_path):
    write_wav(tmp_path / "long.wav", 0.1 * np.sin(np.arange(128000) / 10))
    assert read_wav(tmp_path / "long.wav")[0].shape == (128000,)


def test_wav_clips_out_of_range(tmp_path):
    write_wav(tmp_path / "c.wav", np.array([2.0, -2.0, 1.0]))
    y, _ = read_wav(tmp_path / "c.wav")
    np.testing.assert_array_equal(y, [32767 / 32768, -1.0, 32767 / 32768])


def test_wav_rejects_stereo(tmp_path):
    with wave.open(str(tmp_path / "st.wav"), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(bytes(40))
    with pytest.raises(ValueError, match="mono"):
        read_wav(tmp_path / "st.wav")


def test_wav_rate_check(tmp_path):
    write_wav(tmp_path / "r.wav", np.zeros(10), sample_rate=8000)
    with pytest.raises(ValueError, match="8000"):
        read_wav(tmp_path / "r.wav")
    assert read_wav(tmp_path / "r.wav", allow_any_rate=True)[1] == 8000


def test_wav_rejects_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(ValueError):
        read_wav(tmp_path / "g.wav")


# -- AVF --------------------------------------------------------------------------------

def test_avf_roundtrip_and_size(tmp_path):
    v = np.random.default_rng(0).standard_normal((200, 512)).astype(np.float32)
    write_avf(tmp_path / "v.avf", VisualFeatures(v, 25))
    assert (tmp_path / "v.avf").stat().st_size == 16 + 409600
    out = read_avf(tmp_path / "v.avf")
    assert out.fps == 25 and out.values.shape == (200, 512)
    assert out.values.tobytes() == v.tobytes()


def test_avf_bad_magic(tmp_path):
    (tmp_path / "b.avf").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError):
        read_avf(tmp_path / "b.avf")


def test_avf_size_mismatch(tmp_path):
    write_avf(tmp_path / "v.avf", np.zeros((3, 4), np.float32), fps=25)
    data = (tmp_path / "v.avf").read_bytes()
    (tmp_path / "v.avf").write_bytes(data[:-4])
    with pytest.raises(ValueError, match="expected"):
        read_avf(tmp_path / "v.avf")


# -- gain solver --------------------------------------------------------------------------

def test_gain_orthogonal_equal_energy_at_zero_db():
    s = np.array([1.0, -1.0, 1.0, -1.0])
    n = np.array([1.0, 1.0, -1.0, -1.0])
    assert solve_interference_gain(s, n, 0.0) == pytest.approx(1.0)


def test_gain_orthogonal_closed_form():
    s = np.array([1.0, -1.0, 1.0, -1.0])
    n = np.array([1.0, 1.0, -1.0, -1.0])
    # |s|^2 / (g^2 |n|^2) = 10^(dB/10)
    assert solve_interference_gain(s, n, 10.0) == pytest.approx(10 ** -0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-12, 12))
def test_gain_measure_back(seed, db):
    rng = np.random.default_rng(seed)
    s, n = rng.standard_normal(500), rng.standard_normal(500)
    g = solve_interference_gain(s, n, db)
    assert g > 0
    assert si_snr(s + g * n, s) == pytest.approx(db, abs=1e-4)


def test_gain_monotone_in_target_sisnr():
    rng = np.random.default_rng(1)
    s, n = rng.standard_normal(300), rng.standard_normal(300)
    gains = [solve_interference_gain(s, n, db) for db in np.linspace(-10, 10, 21)]
    assert all(a > b for a, b in zip(gains, gains[1:]))


def test_gain_rejects_collinear_noise():
    s = np.random.default_rng(2).standard_normal(50)
    with pytest.raises(ValueError, match="collinear"):
        solve_interference_gain(s, 2 * s, 0.0)


# -- mixture synthesis -----------------------------------------------------------------------

def _speech(n_interf, seed=0, n=8000):
    return synth_speech(n, seed=seed), [synth_speech(n, seed=seed + j + 1) for j in range(n_interf)]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_mixture_hits_requested_sisnr(k):
    target, interf = _speech(k, seed=10 * k)
    mix = synth_mixture(target, interf, seed=k, sisnr_db=-2.5)
    assert si_snr(mix.mixture, mix.reference) == pytest.approx(-2.5, abs=1e-4)
    assert mix.spec.n_interferers == k and mix.spec.mu == MIXTURE_MU[k]


def test_mixture_peak_limited_and_reference_scaled_together():
    target, interf = _speech(3, seed=5)
    mix = synth_mixture(10 * target, [10 * x for x in interf], seed=1, sisnr_db=-5.0)
    assert np.max(np.abs(mix.mixture)) <= 0.99 + 1e-12
    assert mix.scale < 1
    np.testing.assert_allclose(mix.reference, 10 * target * mix.scale, rtol=1e-6)


def test_mixture_drawn_is_deterministic():
    target, interf = _speech(2)
    a = synth_mixture(target, interf, seed=42)
    b = synth_mixture(target, interf, seed=42)
    assert a.mixture.tobytes() == b.mixture.tobytes()
    assert a.spec.drawn_sisnr == b.spec.drawn_sisnr
    assert MIXTURE_MU[2] - 5 <= a.spec.drawn_sisnr <= MIXTURE_MU[2] + 5


def test_mixture_pads_short_interferer():
    target = synth_speech(4000, seed=1)
    mix = synth_mixture(target, [np.random.default_rng(2).standard_normal(1000)], sisnr_db=0.0)
    assert mix.mixture.shape == (4000,)
    assert si_snr(mix.mixture, mix.reference) == pytest.approx(0.0, abs=1e-4)


@pytest.mark.parametrize("k", [0, 5])
def test_mixture_interferer_count(k):
    target = synth_speech(1000)
    with pytest.raises(ValueError):
        synth_mixture(target, [target] * k, sisnr_db=0.0)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_drawn_values_are_centred(k):
    rng = np.random.default_rng(k)
    draws = np.array([draw_sisnr(k, rng) for _ in range(5000)])
    assert abs(draws.mean() - MIXTURE_MU[k]) < 0.15
    assert draws.min() >= MIXTURE_MU[k] - 5 and draws.max() <= MIXTURE_MU[k] + 5


def test_spec_validation():
    with pytest.raises(ValueError):
        MixtureSpec(5, -7.0, -7.0, 0)


# -- synthetic visual features -----------------------------------------------------------------

def test_visual_rows_per_duration():
    v = gen_synthetic_visual(synth_speech(128000), fps=25, dim=512, seed=0)
    assert v.values.shape == (200, 512)
    np.testing.assert_allclose(np.linalg.norm(v.values, axis=1), 1.0, atol=1e-5)


def test_visual_silence_gives_identical_rows():
    v = gen_synthetic_visual(np.zeros(16000), fps=25, dim=16, seed=3).values
    assert np.all(v == v[0])


def test_visual_deterministic_and_seed_dependent():
    x = synth_speech(16000, seed=4)
    a = gen_synthetic_visual(x, dim=16, seed=1).values
    b = gen_synthetic_visual(x, dim=16, seed=1).values
    c = gen_synthetic_visual(x, dim=16, seed=2).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_visual_tracks_target_energy():
    x = synth_speech(32000, seed=5)
    v = gen_synthetic_visual(x, dim=8, seed=0).values
    # rows differ where the loudness changes, so they are not all identical
    assert np.ptp(v, axis=0).max() > 0.1


def test_visual_fps_must_divide_rate():
    with pytest.raises(ValueError):
        gen_synthetic_visual(np.ones(100), fps=30, sample_rate=16000)


# -- manifests ----------------------------------------------------------------------------------

def test_manifest_roundtrip_and_load(tmp_path):
    write_wav(tmp_path / "t.wav", synth_speech(4000, seed=1))
    write_wav(tmp_path / "i.wav", synth_speech(4000, seed=2))
    write_manifest(tmp_path / "m.jsonl", [{"target": "t.wav", "interferers": ["i.wav"],
                                           "drawn_sisnr": 1.5, "seed": 3}])
    (entry,) = read_manifest(tmp_path / "m.jsonl")
    assert entry["target"] == str(tmp_path / "t.wav")
    ex = load_example(entry, fps=25, dim=8)
    assert ex.visual.shape == (7, 8)  # ceil(4000 / 640)
    assert si_snr(ex.mixture, ex.reference) == pytest.approx(1.5, abs=1e-3)


def test_manifest_missing_field(tmp_path):
    (tmp_path / "m.jsonl").write_text(json.dumps({"target": "a.wav"}) + "\n")
    with pytest.raises(ValueError, match="interferers"):
        read_manifest(tmp_path / "m.jsonl")


def test_manifest_bad_json(tmp_path):
    (tmp_path / "m.jsonl").write_text("{oops\n")
    with pytest.raises(ValueError, match=":1:"):
        read_manifest(tmp_path / "m.jsonl")
