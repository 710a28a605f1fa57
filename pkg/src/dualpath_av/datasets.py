"""Audio/visual file formats, mixture synthesis and synthetic training material."""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# mean mixture SI-SNR (dB) per number of interfering speakers
MIXTURE_MU = {1: 0.0, 2: -3.4, 3: -5.4, 4: -6.7}
SISNR_HALF_RANGE = 5.0
PEAK_LIMIT = 0.99
AVF_MAGIC = b"AVF1"


@dataclass
class VisualFeatures:
    values: np.ndarray
    fps: int = 25

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"visual features must be (T_v>=1, D_v>=1), got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MixtureSpec:
    n_interferers: int
    mu: float
    drawn_sisnr: float
    seed: int | None

    def __post_init__(self):
        if self.n_interferers not in MIXTURE_MU:
            raise ValueError("between 1 and 4 interferers are supported")
        if self.mu != MIXTURE_MU[self.n_interferers]:
            raise ValueError("mu does not match the interferer count")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Mixture:
    mixture: np.ndarray
    reference: np.ndarray
    spec: MixtureSpec
    scale: float


# -- WAV ------------------------------------------------------------------

def read_wav(path, sample_rate: int | None = 16000, allow_any_rate: bool = False) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM mono; samples are scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if sample_rate is not None and rate != sample_rate and not allow_any_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return x, rate


def write_wav(path, waveform, sample_rate: int = 16000) -> None:
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono waveforms can be written")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


# -- AVF1 visual feature files --------------------------------------------

def write_avf(path, visual: VisualFeatures | np.ndarray, fps: int | None = None) -> None:
    if not isinstance(visual, VisualFeatures):
        visual = VisualFeatures(visual, fps or 25)
    rows, cols = visual.values.shape
    with open(path, "wb") as fh:
        fh.write(AVF_MAGIC)
        fh.write(struct.pack("<III", rows, cols, fps or visual.fps))
        fh.write(np.ascontiguousarray(visual.values, dtype="<f4").tobytes())


def read_avf(path) -> VisualFeatures:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != AVF_MAGIC:
        raise ValueError(f"{path}: not an AVF1 visual feature file")
    rows, cols, fps = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).astype(np.float32)
    return VisualFeatures(values, fps or 25)


# -- mixture synthesis ----------------------------------------------------

def solve_interference_gain(target, noise, sisnr_db: float) -> float:
    """Gain g > 0 such that si_snr(target + g * noise, target) == sisnr_db.

    Writing noise = alpha * target + n_perp, the requirement is
    (1/g + alpha)^2 |target|^2 = rho |n_perp|^2 with rho = 10^(dB/10), which is
    the quadratic g^2 (rho|n_perp|^2 - alpha^2|s|^2) - 2 alpha |s|^2 g - |s|^2 = 0
    solved in 1/g. The in-phase root (1 + g*alpha > 0) is preferred.
    """
    s = np.asarray(target, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError("target and noise must have equal length")
    s = s - s.mean()
    n = n - n.mean()
    s_energy = s @ s
    if s_energy == 0 or n @ n == 0:
        raise ValueError("target and noise need non-zero energy")
    alpha = (n @ s) / s_energy
    n_perp = n - alpha * s
    perp_norm = np.sqrt(n_perp @ n_perp)
    if perp_norm <= 1e-9 * np.sqrt(n @ n):
        raise ValueError("noise is collinear with the target; SI-SNR cannot be controlled")
    root = np.sqrt(10.0 ** (sisnr_db / 10.0)) * perp_norm / np.sqrt(s_energy)
    for inv_g in (root - alpha, -root - alpha):
        if inv_g > 0:
            return float(1.0 / inv_g)
    raise ValueError(f"no positive gain reaches {sisnr_db} dB")


def draw_sisnr(n_interferers: int, rng: np.random.Generator) -> float:
    mu = MIXTURE_MU[n_interferers]
    return float(rng.uniform(mu - SISNR_HALF_RANGE, mu + SISNR_HALF_RANGE))


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)[:n]
    return np.pad(x, (0, n - x.shape[0]))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def synth_mixture(target, interferers: Sequence, seed: int | None = None,
                  sisnr_db: float | None = None) -> Mixture:
    """Mix a target with 1-4 interferers at an exact mixture SI-SNR.

    Interferers are cropped/zero-padded to the target length, RMS-matched to
    the target and summed; one global gain then sets si_snr(mixture, target).
    When ``sisnr_db`` is None it is drawn from U(mu - 5, mu + 5).
    """
    k = len(interferers)
    if k not in MIXTURE_MU:
        raise ValueError(f"between 1 and 4 interferers are supported, got {k}")
    target = np.asarray(target, dtype=np.float64)
    n = target.shape[0]
    t_rms = _rms(target)
    if t_rms == 0:
        raise ValueError("target is silent")
    noise = np.zeros(n)
    for x in interferers:
        x = _fit_length(x, n)
        r = _rms(x)
        if r == 0:
            raise ValueError("an interferer is silent")
        noise += x * (t_rms / r)
    rng = np.random.default_rng(seed)
    if sisnr_db is None:
        sisnr_db = draw_sisnr(k, rng)
    g = solve_interference_gain(target, noise, sisnr_db)
    mix = target + g * noise
    peak = float(np.max(np.abs(mix)))
    scale = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    spec = MixtureSpec(k, MIXTURE_MU[k], float(sisnr_db), seed)
    return Mixture(mix * scale, target * scale, spec, scale)


# -- synthetic material ---------------------------------------------------

def gen_synthetic_visual(target, fps: int = 25, dim: int = 512, seed: int = 0,
                         sample_rate: int = 16000) -> VisualFeatures:
    """Target-correlated stand-in for face embeddings.

    Per video frame: log-energy with its first and second differences, mapped
    by a seeded random affine projection to ``dim`` and L2-normalized.
    """
    if sample_rate % fps:
        raise ValueError(f"{fps} fps does not divide {sample_rate} Hz into whole frames")
    hop = sample_rate // fps
    x = np.asarray(target, dtype=np.float64)
    n = -(-x.shape[0] // hop)
    frames_ = np.pad(x, (0, n * hop - x.shape[0])).reshape(n, hop)
    log_e = np.log10(np.mean(frames_ ** 2, axis=1) + 1e-10)
    delta = np.gradient(log_e) if n > 1 else np.zeros(n)
    delta2 = np.gradient(delta) if n > 1 else np.zeros(n)
    feats = np.stack([log_e, delta, delta2], axis=1)
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((3, dim))
    bias = rng.standard_normal(dim)
    rows = feats @ proj + bias
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return VisualFeatures(rows.astype(np.float32), fps)


def synth_speech(n_samples: int, sample_rate: int = 16000, seed: int = 0) -> np.ndarray:
    """Speech-like test signal: a gliding harmonic voice gated into syllables."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate
    f0 = rng.uniform(90, 260) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 3) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    formants = rng.uniform([300, 900, 2000], [900, 2000, 3200])
    voice = np.zeros(n_samples)
    for k in range(1, int(4000 // f0.max()) + 1):
        freq = k * f0.mean()
        amp = sum(np.exp(-0.5 * ((freq - f) / 150.0) ** 2) for f in formants) + 0.1
        voice += amp / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    env = np.zeros(n_samples)
    pos = int(rng.integers(0, sample_rate // 10))
    while pos < n_samples:
        length = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = np.sin(np.pi * np.arange(min(length, n_samples - pos)) / length) ** 2
        env[pos:pos + seg.shape[0]] = seg * rng.uniform(0.4, 1.0)
        pos += length + int(rng.uniform(0.03, 0.15) * sample_rate)
    y = voice * env
    return (0.1 * y / (np.sqrt(np.mean(y ** 2)) + 1e-12)).astype(np.float32)


# -- manifests ------------------------------------------------------------

@dataclass
class Example:
    mixture: np.ndarray
    reference: np.ndarray
    visual: np.ndarray
    spec: MixtureSpec | None = None


def synthetic_examples(n_items: int, n_interferers: int = 2, seconds: float = 2.0,
                       fps: int = 25, dim: int = 512, sample_rate: int = 16000,
                       seed: int = 0) -> list[Example]:
    """Fixed set of synthetic target/interferer mixtures with matching visual features."""
    n = int(round(seconds * sample_rate))
    items = []
    for i in range(n_items):
        base = seed * 1000 + i * 10
        target = synth_speech(n, sample_rate, base)
        interferers = [synth_speech(n, sample_rate, base + j + 1) for j in range(n_interferers)]
        mix = synth_mixture(target, interferers, seed=base)
        visual = gen_synthetic_visual(target, fps, dim, seed=base, sample_rate=sample_rate).values
        items.append(Example(mix.mixture.astype(np.float32), mix.reference.astype(np.float32),
                             visual, mix.spec))
    return items


def read_manifest(path) -> list[dict]:
    """JSON-lines manifest; relative paths resolve against the manifest directory."""
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        for key in ("target", "interferers"):
            if key not in entry:
                raise ValueError(f"{path}:{lineno}: missing field {key!r}")
        entry["target"] = str(base / entry["target"])
        entry["interferers"] = [str(base / p) for p in entry["interferers"]]
        if entry.get("visual"):
            entry["visual"] = str(base / entry["visual"])
        entries.append(entry)
    return entries


def write_manifest(path, entries: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({"target": e["target"], "interferers": list(e["interferers"]),
                                 "visual": e.get("visual"), "drawn_sisnr": e.get("drawn_sisnr"),
                                 "seed": e.get("seed", 0)}) + "\n")


def load_example(entry: dict, fps: int = 25, dim: int = 512, sample_rate: int = 16000) -> Example:
    """Materialize one manifest entry into arrays (deterministic in the entry's seed)."""
    target, _ = read_wav(entry["target"], sample_rate)
    interferers = [read_wav(p, sample_rate)[0] for p in entry["interferers"]]
    seed = int(entry.get("seed") or 0)
    mix = synth_mixture(target, interferers, seed=seed, sisnr_db=entry.get("drawn_sisnr"))
    if entry.get("visual"):
        visual = read_avf(entry["visual"]).values
    else:
        visual = gen_synthetic_visual(target, fps, dim, seed, sample_rate).values
    return Example(mix.mixture.astype(np.float32), mix.reference.astype(np.float32), visual, mix.spec)


__all__ = [
    "MIXTURE_MU", "VisualFeatures", "MixtureSpec", "Mixture", "Example", "read_wav", "write_wav",
    "read_avf", "write_avf", "solve_interference_gain", "draw_sisnr", "synth_mixture",
    "gen_synthetic_visual", "synth_speech", "read_manifest", "write_manifest", "load_example",
    "synthetic_examples",
]
