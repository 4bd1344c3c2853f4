import numpy as np
import pytest

from adhoc_css.audio import AudioClip, StftConfig
from adhoc_css.simulate import SimConfig, synthesize_catalog


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def stft_cfg():
    return StftConfig()


@pytest.fixture(scope="session")
def toy_catalog():
    return synthesize_catalog(3, 3, 4.0, np.random.default_rng(7))


@pytest.fixture(scope="session")
def fast_sim_cfg():
    # small rooms / low reflection order so per-test generation stays quick
    return SimConfig(num_devices=2, max_order=2, rir_len_s=0.15,
                     snr_db_range=(10.0, 15.0), absorption_range=(0.6, 0.9))


def tone(freq, duration_s=1.0, fs=16000, amp=0.5):
    t = np.arange(int(duration_s * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


@pytest.fixture(scope="session")
def tone_clip():
    return AudioClip(tone(440.0))
