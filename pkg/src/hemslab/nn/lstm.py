"""LSTM cell / sequence / bidirectional layers (inference-path API).

Parameters are stored gate-stacked: W [4H, D], U [4H, H], b [4H] with row
blocks ordered input, forget, output, candidate. Training goes through the
taped ops in `tape`; the functions here are plain numpy and shared with the
oracle-style tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, EmptySequence
from . import backend as K


@dataclass
class LstmCellParams:
    W: np.ndarray  # [4H, D]
    U: np.ndarray  # [4H, H]
    b: np.ndarray  # [4H]

    def __post_init__(self):
        H4, D = self.W.shape
        if H4 % 4 != 0 or self.U.shape != (H4, H4 // 4) or self.b.shape != (H4,):
            raise DimensionMismatch("inconsistent LSTM parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0] // 4

    # per-gate views, in the stacking order documented above
    def _block(self, arr, k):
        H = self.hidden_dim
        return arr[k * H : (k + 1) * H]

    @property
    def W_i(self): return self._block(self.W, 0)
    @property
    def W_f(self): return self._block(self.W, 1)
    @property
    def W_o(self): return self._block(self.W, 2)
    @property
    def W_g(self): return self._block(self.W, 3)
    @property
    def U_i(self): return self._block(self.U, 0)
    @property
    def U_f(self): return self._block(self.U, 1)
    @property
    def U_o(self): return self._block(self.U, 2)
    @property
    def U_g(self): return self._block(self.U, 3)
    @property
    def b_i(self): return self._block(self.b, 0)
    @property
    def b_f(self): return self._block(self.b, 1)
    @property
    def b_o(self): return self._block(self.b, 2)
    @property
    def b_g(self): return self._block(self.b, 3)

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "LstmCellParams":
        """Uniform +-1/sqrt(fan_in); forget-gate bias starts at 1."""
        H = hidden_dim
        W = rng.uniform(-1, 1, (4 * H, input_dim)) / np.sqrt(input_dim)
        U = rng.uniform(-1, 1, (4 * H, H)) / np.sqrt(H)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return cls(W, U, b)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmCellParams":
        H = hidden_dim
        return cls(np.zeros((4 * H, input_dim)), np.zeros((4 * H, H)), np.zeros(4 * H))


@dataclass
class BiLstmParams:
    forward: LstmCellParams
    backward: LstmCellParams

    def __post_init__(self):
        if (self.forward.input_dim != self.backward.input_dim
                or self.forward.hidden_dim != self.backward.hidden_dim):
            raise DimensionMismatch("forward/backward directions must share dims")

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "BiLstmParams":
        return cls(
            LstmCellParams.init(rng, input_dim, hidden_dim),
            LstmCellParams.init(rng, input_dim, hidden_dim),
        )


def lstm_cell_step(params: LstmCellParams, x, h_prev, c_prev):
    """One LSTM recurrence step; returns (h, c)."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H = params.hidden_dim
    if x.shape != (params.input_dim,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise DimensionMismatch(
            f"expected x[{params.input_dim}], h/c[{H}]; "
            f"got {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    hs, cs, _ = K.lstm_seq_forward(
        np.ascontiguousarray(x[None, :]), h_prev, c_prev, params.W, params.U, params.b
    )
    return hs[0], cs[0]


def lstm_forward(params: LstmCellParams, sequence, h0=None, c0=None):
    """Iterate the cell over a [T, D] sequence.

    Returns (hidden states [T, H], (h_T, c_T)).
    """
    seq = np.ascontiguousarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptySequence(f"need a nonempty [T, D] sequence, got shape {seq.shape}")
    if seq.shape[1] != params.input_dim:
        raise DimensionMismatch(f"input dim {seq.shape[1]} != {params.input_dim}")
    H = params.hidden_dim
    h0 = np.zeros(H) if h0 is None else np.asarray(h0, dtype=np.float64)
    c0 = np.zeros(H) if c0 is None else np.asarray(c0, dtype=np.float64)
    hs, cs, _ = K.lstm_seq_forward(seq, h0, c0, params.W, params.U, params.b)
    return hs, (hs[-1], cs[-1])


def bilstm_forward(params: BiLstmParams, sequence):
    """Bidirectional pass over [T, D].

    Output step t concatenates forward_t with backward_{T-1-t}; the summary
    concatenates the two final hidden states.
    """
    seq = np.ascontiguousarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptySequence(f"need a nonempty [T, D] sequence, got shape {seq.shape}")
    hs_f, (hf, _) = lstm_forward(params.forward, seq)
    hs_b, (hb, _) = lstm_forward(params.backward, np.ascontiguousarray(seq[::-1]))
    states = np.concatenate([hs_f, hs_b[::-1]], axis=1)
    summary = np.concatenate([hf, hb])
    return states, summary
