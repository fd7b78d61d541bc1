"""Diagnostic class labels with their fixed index order."""

import numpy as np

CLASSES = ("AD", "MCI", "CN")
AD, MCI, CN = 0, 1, 2
N_CLASSES = len(CLASSES)


def label_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= int(label) < N_CLASSES:
            raise ValueError(f"label index {label} out of range")
        return int(label)
    name = str(label).strip().upper()
    if name == "NC":  # healthy controls are sometimes spelled NC
        name = "CN"
    if name not in CLASSES:
        raise ValueError(f"unknown label {label!r}; expected one of {CLASSES}")
    return CLASSES.index(name)


def label_name(index) -> str:
    return CLASSES[label_index(index)]


def as_label_array(labels) -> np.ndarray:
    if isinstance(labels, np.ndarray) and labels.dtype.kind in "iu":
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ValueError("label index out of range")
        return labels.astype(np.int64, copy=False)
    return np.array([label_index(v) for v in labels], dtype=np.int64)
