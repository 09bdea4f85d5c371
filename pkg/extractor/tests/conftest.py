import numpy as np
import pytest
from scipy.io import wavfile


def _tone(rate, seconds, freq, rng, stereo=False):
    t = np.arange(int(rate * seconds)) / rate
    x = 0.4 * np.sin(2 * np.pi * freq * t) + 0.05 * rng.standard_normal(t.shape)
    x = (x * 32767).astype(np.int16)
    if stereo:
        x = np.stack([x, np.roll(x, 3)], axis=1)
    return x


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Ten small WAVs over two classes: mixed rates, one stereo, varied lengths."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(0)
    rows = []
    specs = [
        (16000, 0.5, 220, False), (16000, 0.8, 330, False), (22050, 0.6, 440, False),
        (8000, 0.7, 200, False), (16000, 0.4, 550, True),
        (16000, 0.5, 800, False), (22050, 0.9, 950, False), (16000, 0.6, 1100, True),
        (8000, 1.0, 700, False), (16000, 0.3, 1300, False),
    ]
    for i, (rate, seconds, freq, stereo) in enumerate(specs):
        path = root / f"utt{i:02d}.wav"
        wavfile.write(path, rate, _tone(rate, seconds, freq, rng, stereo))
        label = 0 if i < 5 else 1
        rows.append((str(path), label, f"utt{i:02d}"))
    tsv = root / "corpus.tsv"
    tsv.write_text("".join(f"{p}\t{lab}\t{sid}\n" for p, lab, sid in rows))
    return {"rows": rows, "tsv": tsv, "root": root}
