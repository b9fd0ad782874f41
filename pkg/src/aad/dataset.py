"""Trial bundles and the on-disk dataset layout.

A dataset directory holds a ``manifest.json`` plus one subdirectory per
participant; each trial is stored as five .f32/.json pairs (EEG and the
four feature streams). Synthetic datasets additionally carry a
``truth.json`` with the planted ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .features import FeatureSignal
from .io import read_f32, write_f32
from .signals import MultiSignal

SPEAKER_LABELS = ("male", "female")


@dataclass(frozen=True)
class TrialBundle:
    """One trial: two-channel EEG plus attended/ignored feature pairs."""

    eeg: MultiSignal
    att_envelope: FeatureSignal
    att_onsets: FeatureSignal
    ign_envelope: FeatureSignal
    ign_onsets: FeatureSignal
    attended_label: str
    index: int

    def __post_init__(self):
        if self.attended_label not in SPEAKER_LABELS:
            raise ValueError(f"attended_label must be one of {SPEAKER_LABELS}")
        lengths = {
            self.eeg.n_samples,
            len(self.att_envelope),
            len(self.att_onsets),
            len(self.ign_envelope),
            len(self.ign_onsets),
        }
        if len(lengths) != 1:
            raise ValueError(f"trial signals have unequal lengths: {lengths}")

    @property
    def n_samples(self) -> int:
        return self.eeg.n_samples

    @property
    def fs(self) -> float:
        return self.eeg.fs

    def feature(self, role: str, kind: str) -> FeatureSignal:
        """Select a feature stream by role (attended/ignored) and kind."""
        table = {
            ("attended", "envelope"): self.att_envelope,
            ("attended", "onset_envelope"): self.att_onsets,
            ("ignored", "envelope"): self.ign_envelope,
            ("ignored", "onset_envelope"): self.ign_onsets,
        }
        try:
            return table[(role, kind)]
        except KeyError:
            raise ValueError(f"no feature for role={role!r}, kind={kind!r}") from None


_TRIAL_FILES = {
    "eeg": "eeg",
    "att_envelope": "att.env",
    "att_onsets": "att.ons",
    "ign_envelope": "ign.env",
    "ign_onsets": "ign.ons",
}


def save_trial(participant_dir, trial: TrialBundle):
    participant_dir = Path(participant_dir)
    participant_dir.mkdir(parents=True, exist_ok=True)
    stem = f"trial{trial.index:02d}"
    write_f32(
        participant_dir / f"{stem}.eeg.f32",
        trial.eeg.data,
        trial.eeg.fs,
        channels=trial.eeg.channels,
    )
    for attr in ("att_envelope", "att_onsets", "ign_envelope", "ign_onsets"):
        sig = getattr(trial, attr)
        write_f32(
            participant_dir / f"{stem}.{_TRIAL_FILES[attr]}.f32",
            sig.samples,
            sig.fs,
            channels=["feature"],
            extra={"feature_kind": sig.kind},
        )


def load_trial(participant_dir, index: int, attended_label: str) -> TrialBundle:
    participant_dir = Path(participant_dir)
    stem = f"trial{index:02d}"

    def _read(suffix):
        path = participant_dir / f"{stem}.{suffix}.f32"
        if not path.exists():
            raise IngestionError(f"missing trial file: {path}")
        return read_f32(path)

    eeg_data, eeg_meta = _read("eeg")
    eeg = MultiSignal(eeg_meta["channels"], eeg_data, eeg_meta["fs"])
    feats = {}
    for attr, suffix in _TRIAL_FILES.items():
        if attr == "eeg":
            continue
        data, meta = _read(suffix)
        feats[attr] = FeatureSignal(data[0], meta["fs"], kind=meta["feature_kind"])
    return TrialBundle(eeg=eeg, attended_label=attended_label, index=index, **feats)


def write_manifest(root, fs: float, participants: dict[str, list[dict]]):
    """participants maps id -> list of {"index": int, "attended": label}."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "fs": fs,
        "participants": [
            {"id": pid, "trials": trials} for pid, trials in participants.items()
        ],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise IngestionError(f"no manifest.json in {root}")
    with open(path) as fh:
        return json.load(fh)


def participant_ids(root) -> list[str]:
    return [p["id"] for p in load_manifest(root)["participants"]]


def load_participant(root, participant_id: str) -> list[TrialBundle]:
    """Load all of one participant's trials, ordered by trial index."""
    manifest = load_manifest(root)
    entry = next(
        (p for p in manifest["participants"] if p["id"] == participant_id), None
    )
    if entry is None:
        raise IngestionError(f"participant {participant_id!r} not in manifest")
    pdir = Path(root) / participant_id
    trials = []
    for spec in sorted(entry["trials"], key=lambda t: t["index"]):
        trials.append(load_trial(pdir, spec["index"], spec["attended"]))
    lengths = {t.fs for t in trials}
    if len(lengths) > 1:
        raise IngestionError(f"{participant_id}: trials have mixed sampling rates")
    return trials


def load_truth(root) -> dict | None:
    path = Path(root) / "truth.json"
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def save_truth(root, truth: dict):
    with open(Path(root) / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")
