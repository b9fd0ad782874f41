"""f32 payloads, sidecars and WAV reading."""

import json

import numpy as np
import pytest

from aad.io import (
    load_payload,
    read_f32,
    read_f32_signal,
    read_wav,
    save_payload,
    sidecar_path,
    write_f32,
)
from aad.signals import MultiSignal, Signal


class TestF32:
    def test_round_trip_multichannel(self, tmp_path):
        data = np.random.default_rng(0).standard_normal((2, 100))
        path = write_f32(tmp_path / "x.f32", data, 64.0, channels=["u", "b"])
        out, meta = read_f32(path)
        assert np.allclose(out, data, atol=1e-6)
        assert meta["channels"] == ["u", "b"]
        assert meta["fs"] == 64.0
        assert meta["samples"] == 100

    def test_sidecar_extra_fields(self, tmp_path):
        path = write_f32(
            tmp_path / "f.f32",
            np.ones(10),
            64.0,
            extra={"feature_kind": "envelope", "source_digest": "ab12"},
        )
        meta = json.loads(sidecar_path(path).read_text())
        assert meta["feature_kind"] == "envelope"
        assert meta["source_digest"] == "ab12"

    def test_signal_reader(self, tmp_path):
        path = write_f32(tmp_path / "s.f32", np.arange(8.0), 64.0)
        sig = read_f32_signal(path)
        assert isinstance(sig, Signal)
        path2 = write_f32(tmp_path / "m.f32", np.ones((3, 8)), 64.0)
        ms = read_f32_signal(path2)
        assert isinstance(ms, MultiSignal)
        assert ms.n_channels == 3

    def test_corrupt_payload_detected(self, tmp_path):
        path = write_f32(tmp_path / "c.f32", np.ones(10), 64.0)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 4)
        with pytest.raises(ValueError):
            read_f32(path)


class TestWav:
    def write_wav(self, path, data, fs=44100, dtype=np.int16):
        from scipy.io import wavfile

        if dtype == np.int16:
            wavfile.write(path, fs, (data * 32767).astype(np.int16))
        else:
            wavfile.write(path, fs, (data * 2147483000).astype(np.int32))

    def test_reads_16bit_mono(self, tmp_path):
        t = np.arange(4410) / 44100
        x = 0.5 * np.sin(2 * np.pi * 440 * t)
        self.write_wav(tmp_path / "a.wav", x)
        sig = read_wav(tmp_path / "a.wav")
        assert isinstance(sig, Signal)
        assert sig.fs == 44100.0
        assert np.abs(sig.samples - x).max() < 1e-3

    def test_reads_32bit_stereo(self, tmp_path):
        x = np.stack([np.linspace(-0.5, 0.5, 100), np.zeros(100)], axis=1)
        self.write_wav(tmp_path / "b.wav", x, dtype=np.int32)
        sig = read_wav(tmp_path / "b.wav")
        assert isinstance(sig, MultiSignal)
        assert sig.n_channels == 2
        assert np.abs(sig.data[0] - x[:, 0]).max() < 1e-5


class TestPayload:
    def test_round_trip(self, tmp_path):
        arrays = {
            "weights": np.random.default_rng(1).standard_normal((3, 4)),
            "bias": np.array([0.5]),
        }
        path = save_payload(tmp_path / "m.f32", {"kind": "test"}, arrays)
        header, loaded = load_payload(path)
        assert header["kind"] == "test"
        assert np.allclose(loaded["weights"], arrays["weights"], atol=1e-6)
        assert loaded["bias"].shape == (1,)
