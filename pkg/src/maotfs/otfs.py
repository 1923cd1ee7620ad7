"""Delay-Doppler framing and OTFS modulation / demodulation.

Grid and vectorization conventions (used repo-wide):

* a frame is an M x N complex array, delay along rows, Doppler along
  columns;
* the delay-time matrix is also M x N (delay row, time block column);
* time-domain vectors have length N*M and are the column-wise
  vectorization of the delay-time matrix, so sample q = n*M + m holds
  delay row m of time block n;
* the forward DFT matrix uses exp(-j*2*pi*a*b/n) entries, normalized to
  be unitary.
"""

import numpy as np


def dft_matrix(n: int) -> np.ndarray:
    """Unitary n-point DFT matrix with entry (a, b) = exp(-j2pi*a*b/n)/sqrt(n)."""
    if n < 1:
        raise ValueError(f"DFT size must be a positive integer, got {n}")
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def _as_frame(frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.complex128)
    if frame.ndim != 2:
        raise ValueError(f"frame must be a 2-D array, got shape {frame.shape}")
    if not np.all(np.isfinite(frame.view(np.float64))):
        raise ValueError("frame contains non-finite entries")
    return frame


def otfs_modulate(frame) -> np.ndarray:
    """Map an M x N delay-Doppler frame to the length-N*M time-domain vector.

    Applies the inverse DFT along the Doppler axis (rows stay in the delay
    domain) and vectorizes the resulting delay-time matrix column-wise.
    """
    frame = _as_frame(frame)
    n = frame.shape[1]
    delay_time = frame @ dft_matrix(n).conj().T
    return delay_time.flatten(order="F")


def otfs_demodulate(samples, m: int, n: int) -> np.ndarray:
    """Fold a length-N*M received vector into the M x N delay-Doppler frame.

    Inverse of :func:`otfs_modulate` for a distortion-free channel: the
    vector is folded column-wise into the M x N delay-time matrix, then the
    forward DFT is applied along the time-block axis.
    """
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    if samples.size != m * n:
        raise ValueError(
            f"received vector has length {samples.size}, expected {m * n}"
        )
    delay_time = samples.reshape((m, n), order="F")
    return delay_time @ dft_matrix(n)
