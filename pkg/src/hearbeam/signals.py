"""Self-contained test signal generators: speech-like voices and noise beds.

Nothing here is recorded audio. Voices are glottal-style pulse trains shaped
by slowly wandering formant resonators with utterance/pause structure, which
is enough to exercise localization, tracking and enhancement without bundling
licensed speech material. Noise generators cover the usual room offenders:
ventilation rumble, appliance hum, footsteps, dish clatter.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

VOICE_BAND_HZ = (80.0, 6000.0)


def _resonator_coeffs(freq: float, bandwidth: float, sample_rate: int):
    r = np.exp(-np.pi * bandwidth / sample_rate)
    w0 = 2.0 * np.pi * freq / sample_rate
    b = np.array([1.0 - r])
    a = np.array([1.0, -2.0 * r * np.cos(w0), r * r])
    return b, a


def _utterance_gate(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """On/off speech envelope: utterances of 0.8-2.2 s with 0.25-0.7 s gaps."""
    gate = np.zeros(n)
    t = rng.uniform(0.0, 0.3)
    while t * sample_rate < n:
        on = rng.uniform(0.8, 2.2)
        a = int(t * sample_rate)
        b = min(int((t + on) * sample_rate), n)
        gate[a:b] = 1.0
        t += on + rng.uniform(0.25, 0.7)
    # 20 ms raised-cosine edges so activity on/off does not click
    edge = max(int(0.02 * sample_rate) | 1, 3)
    win = np.hanning(edge)
    return np.convolve(gate, win / win.sum(), mode="same")


def synth_voice(
    duration: float,
    sample_rate: int,
    rng: np.random.Generator,
    pitch_hz: float = 120.0,
) -> np.ndarray:
    """Speech-like signal, unit RMS over its voiced stretches.

    Impulse excitation at a jittered pitch contour, three formant resonators
    whose centers drift utterance to utterance, syllabic amplitude
    modulation, and a low breath-noise floor.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    drift = sps.lfilter(*sps.butter(2, 1.0 / (sample_rate / 2), "low"),
                        rng.standard_normal(n))
    drift = drift / (np.max(np.abs(drift)) + 1e-12)
    f0 = pitch_hz * (1.0 + 0.08 * drift)
    phase = np.cumsum(f0) / sample_rate
    # One unit impulse per completed pitch period.
    excitation = np.zeros(n)
    excitation[np.flatnonzero(np.diff(np.floor(phase)) > 0)] = 1.0
    excitation += 0.015 * rng.standard_normal(n)

    base_formants = np.array(
        [rng.uniform(350.0, 750.0), rng.uniform(1000.0, 1900.0), rng.uniform(2300.0, 3000.0)]
    )
    bandwidths = np.array([80.0, 110.0, 160.0])

    # Block-wise formant filtering with carried filter state; the centers
    # wander a little per block, which is the "different vowels" effect.
    block = int(0.1 * sample_rate)
    voiced = np.zeros(n)
    zi = [np.zeros(2) for _ in range(3)]
    for start in range(0, n, block):
        stop = min(start + block, n)
        wander = 1.0 + 0.15 * rng.standard_normal(3)
        for i in range(3):
            b, a = _resonator_coeffs(
                float(np.clip(base_formants[i] * wander[i], 150.0, 3600.0)),
                float(bandwidths[i]),
                sample_rate,
            )
            out, zi[i] = sps.lfilter(b, a, excitation[start:stop], zi=zi[i])
            voiced[start:stop] += out

    gate = _utterance_gate(n, sample_rate, rng)
    syllable = 0.55 + 0.45 * np.sin(
        2.0 * np.pi * rng.uniform(2.5, 4.5) * t + rng.uniform(0.0, 2.0 * np.pi)
    )
    x = voiced * gate * syllable
    # The one-sided pulse excitation leaves a DC/infrasonic residue that a
    # room response amplifies coherently; real voices carry none, so strip it.
    sos = sps.butter(2, VOICE_BAND_HZ[0], "highpass", fs=sample_rate, output="sos")
    x = sps.sosfilt(sos, x)
    active = gate > 0.5
    if np.any(active):
        x = x / (np.sqrt(np.mean(x[active] ** 2)) + 1e-12)
    return x


def white_noise(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration * sample_rate))
    x = rng.standard_normal(n)
    return x / np.sqrt(np.mean(x**2))


def hvac_noise(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Ventilation rumble: low-passed noise plus a faint blade-rate tone."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    b, a = sps.butter(4, 250.0 / (sample_rate / 2), "low")
    x = sps.lfilter(b, a, rng.standard_normal(n))
    x += 0.2 * np.std(x) * np.sin(2.0 * np.pi * 55.0 * t)
    return x / np.sqrt(np.mean(x**2))


def vending_hum(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Mains-harmonic appliance hum with a narrowband mechanical wash."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for k, amp in ((1, 1.0), (2, 0.5), (3, 0.25)):
        x += amp * np.sin(2.0 * np.pi * 120.0 * k * t + rng.uniform(0, 2 * np.pi))
    sos = sps.butter(2, [400.0, 800.0], "bandpass", fs=sample_rate, output="sos")
    x += 0.4 * sps.sosfilt(sos, rng.standard_normal(n))
    x *= 1.0 + 0.05 * np.sin(2.0 * np.pi * 0.7 * t)
    return x / np.sqrt(np.mean(x**2))


def footsteps(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Irregular low-frequency thuds, one every 0.4-0.7 s."""
    n = int(round(duration * sample_rate))
    x = np.zeros(n)
    b, a = sps.butter(2, 300.0 / (sample_rate / 2), "low")
    t = rng.uniform(0.0, 0.5)
    while t * sample_rate < n - 1:
        length = int(0.09 * sample_rate)
        start = int(t * sample_rate)
        stop = min(start + length, n)
        burst = rng.standard_normal(stop - start)
        burst *= np.exp(-np.arange(stop - start) / (0.02 * sample_rate))
        x[start:stop] += rng.uniform(0.5, 1.0) * burst
        t += rng.uniform(0.4, 0.7)
    x = sps.lfilter(b, a, x)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


def dish_clatter(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Sparse metallic pings: damped high-frequency partial stacks."""
    n = int(round(duration * sample_rate))
    x = np.zeros(n)
    t = rng.uniform(0.0, 1.0)
    while t * sample_rate < n - 1:
        start = int(t * sample_rate)
        length = min(int(rng.uniform(0.03, 0.08) * sample_rate), n - start)
        tau = rng.uniform(0.008, 0.02) * sample_rate
        tt = np.arange(length)
        ping = np.zeros(length)
        for _ in range(rng.integers(2, 5)):
            f = rng.uniform(1500.0, 6000.0)
            ping += np.sin(2.0 * np.pi * f * tt / sample_rate + rng.uniform(0, 2 * np.pi))
        x[start : start + length] += rng.uniform(0.4, 1.0) * ping * np.exp(-tt / tau)
        t += rng.uniform(0.8, 2.5)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


NOISE_GENERATORS = {
    "white": white_noise,
    "hvac": hvac_noise,
    "vending": vending_hum,
    "footsteps": footsteps,
    "dishes": dish_clatter,
}


def make_noise(
    generator: str, duration: float, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    try:
        fn = NOISE_GENERATORS[generator]
    except KeyError:
        raise ValueError(f"unknown noise generator {generator!r}") from None
    return fn(duration, sample_rate, rng)
