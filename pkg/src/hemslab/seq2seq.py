"""Forecasters: the encoder/decoder/generator network, a two-layer LSTM
direct forecaster, and a persistence baseline.

The main model reads an n-step multi-channel history through a
bidirectional LSTM encoder, compresses it (together with a day-of-week
embedding) into a fixed summary, then
  * reconstructs the history in reverse order (decoder, teacher forced),
  * classifies which channel each reconstructed stream belongs to, and
  * rolls out the m-step forecast autoregressively (generator).
Training minimizes a weighted sum of the three losses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import NormalizationParams, WindowedDataset, denormalize_values
from .errors import DivergedLoss, EmptyDataset, ShapeMismatch
from .nn import checkpoint
from .nn.adam import AdamState, adam_step, clip_global_norm
from .nn.lstm import LstmCellParams
from .nn import tape
from .nn.tape import Tensor


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[str, ...]
    history_len: int
    horizon_len: int
    encoder_hidden: int = 64
    decoder_hidden: int = 128
    dow_embed_dim: int = 4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    lambda_recon: float = 0.5
    lambda_type: float = 0.1
    lambda_forecast: float = 1.0
    patience: int = 5
    clip_norm: float = 5.0
    # deterministic subsampling caps, for desk-scale runs
    windows_per_epoch: int | None = None
    val_windows: int | None = None

    def __post_init__(self):
        if self.lambda_forecast <= 0 or min(self.lambda_recon, self.lambda_type) < 0:
            raise ValueError("loss weights must be >= 0 with lambda_forecast > 0")


def _register(params: dict[str, Tensor], prefix: str, cell: LstmCellParams) -> None:
    params[f"{prefix}_W"] = tape.param(cell.W)
    params[f"{prefix}_U"] = tape.param(cell.U)
    params[f"{prefix}_b"] = tape.param(cell.b)


def pooled_wmape(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Sum|err| / Sum|actual| over everything; |err| sum if actuals all zero."""
    denom = float(np.sum(np.abs(actual)))
    num = float(np.sum(np.abs(actual - predicted)))
    return num / denom if denom > 0 else num


class Seq2SeqForecaster:
    """Bi-LSTM encoder + reverse-reconstruction decoder + forecast generator."""

    def __init__(self, config: ModelConfig, norm: NormalizationParams, seed: int = 0):
        if tuple(norm.channel_names) != tuple(config.channels):
            raise ShapeMismatch("normalization channels do not match model channels")
        self.config = config
        self.norm = norm
        rng = np.random.default_rng(seed)
        C = len(config.channels)
        E = config.encoder_hidden
        Hd = config.decoder_hidden
        de = config.dow_embed_dim
        n = config.history_len
        p: dict[str, Tensor] = {}
        _register(p, "enc_f", LstmCellParams.init(rng, C, E))
        _register(p, "enc_b", LstmCellParams.init(rng, C, E))
        _register(p, "dec", LstmCellParams.init(rng, C, Hd))
        _register(p, "gen", LstmCellParams.init(rng, C, Hd))
        p["dow_embed"] = tape.param(rng.uniform(-0.1, 0.1, (7, de)))
        zdim = 2 * E + de
        for name in ("dec_h0", "dec_c0", "gen_h0", "gen_c0"):
            p[f"bridge_{name}_W"] = tape.param(rng.uniform(-1, 1, (zdim, Hd)) / np.sqrt(zdim))
            p[f"bridge_{name}_b"] = tape.param(np.zeros(Hd))
        p["dec_out_W"] = tape.param(rng.uniform(-1, 1, (Hd, C)) / np.sqrt(Hd))
        p["dec_out_b"] = tape.param(np.zeros(C))
        p["gen_out_W"] = tape.param(rng.uniform(-1, 1, (Hd, C)) / np.sqrt(Hd))
        p["gen_out_b"] = tape.param(np.zeros(C))
        p["type_W"] = tape.param(rng.uniform(-1, 1, (n, C)) / np.sqrt(n))
        p["type_b"] = tape.param(np.zeros(C))
        p["dec_start"] = tape.param(np.zeros(C))
        p["gen_start"] = tape.param(np.zeros(C))
        self.params = p

    # ------------------------------------------------------------ forward

    def encode(self, window: np.ndarray, day_of_week: int) -> dict[str, Tensor]:
        """Summary vector and bridged initial states for decoder/generator."""
        n, C = self.config.history_len, len(self.config.channels)
        if window.shape != (n, C):
            raise ShapeMismatch(f"window shape {window.shape}, expected {(n, C)}")
        p = self.params
        E = self.config.encoder_hidden
        zeros = tape.constant(np.zeros(E))
        x_f = tape.constant(np.ascontiguousarray(window))
        x_b = tape.constant(np.ascontiguousarray(window[::-1]))
        hs_f = tape.lstm_seq(x_f, zeros, zeros, p["enc_f_W"], p["enc_f_U"], p["enc_f_b"])
        hs_b = tape.lstm_seq(x_b, zeros, zeros, p["enc_b_W"], p["enc_b_U"], p["enc_b_b"])
        emb = tape.embedding_row(p["dow_embed"], int(day_of_week) % 7)
        z = tape.concat([tape.row(hs_f, n - 1), tape.row(hs_b, n - 1), emb])
        states = {"summary": z}
        for name in ("dec_h0", "dec_c0", "gen_h0", "gen_c0"):
            proj = tape.matmul(z, p[f"bridge_{name}_W"])
            states[name] = tape.tanh(tape.add(proj, p[f"bridge_{name}_b"]))
        return states

    def decode_reconstruct(self, states: dict[str, Tensor], window: np.ndarray):
        """Teacher-forced reverse reconstruction plus per-stream type logits.

        Step t targets window[n-1-t]; step inputs are the start token
        followed by the true reversed window shifted by one.
        """
        p = self.params
        n = self.config.history_len
        rev = np.ascontiguousarray(window[::-1])
        inputs = [p["dec_start"]] + [tape.constant(rev[t]) for t in range(n - 1)]
        x = tape.stack_rows(inputs)
        hs = tape.lstm_seq(x, states["dec_h0"], states["dec_c0"],
                           p["dec_W"], p["dec_U"], p["dec_b"])
        recon = tape.add(tape.matmul(hs, p["dec_out_W"]), p["dec_out_b"])
        C = len(self.config.channels)
        type_logits = []
        for j in range(C):
            stream = tape.column(recon, j)
            type_logits.append(tape.add(tape.matmul(stream, p["type_W"]), p["type_b"]))
        return recon, type_logits, rev

    def generate_forecast(self, states: dict[str, Tensor]) -> Tensor:
        """Autoregressive m-step rollout (normalized scale)."""
        p = self.params
        Hd = self.config.decoder_hidden
        h, c = states["gen_h0"], states["gen_c0"]
        y_prev = p["gen_start"]
        outputs = []
        for _ in range(self.config.horizon_len):
            hc = tape.lstm_cell(y_prev, h, c, p["gen_W"], p["gen_U"], p["gen_b"])
            h = tape.slice1d(hc, 0, Hd)
            c = tape.slice1d(hc, Hd, 2 * Hd)
            out = tape.add(tape.matmul(h, p["gen_out_W"]), p["gen_out_b"])
            outputs.append(out)
            y_prev = out
        return tape.stack_rows(outputs)

    def window_loss(self, window: np.ndarray, day_of_week: int, target: np.ndarray,
                    cfg: TrainConfig) -> tuple[Tensor, dict[str, float]]:
        states = self.encode(window, day_of_week)
        recon, type_logits, rev = self.decode_reconstruct(states, window)
        forecast = self.generate_forecast(states)
        recon_loss = tape.mse_loss(recon, rev)
        C = len(type_logits)
        ce_terms = [(1.0 / C, tape.softmax_cross_entropy(lg, j))
                    for j, lg in enumerate(type_logits)]
        type_loss = tape.weighted_sum(ce_terms)
        forecast_loss = tape.mse_loss(forecast, target)
        total = tape.weighted_sum([
            (cfg.lambda_recon, recon_loss),
            (cfg.lambda_type, type_loss),
            (cfg.lambda_forecast, forecast_loss),
        ])
        parts = {
            "recon": float(recon_loss.value),
            "type": float(type_loss.value),
            "forecast": float(forecast_loss.value),
        }
        return total, parts

    # ------------------------------------------------------------ predict

    def predict(self, inputs: np.ndarray, day_of_week: np.ndarray) -> np.ndarray:
        """Forecast in watts, clamped >= 0. inputs: [B, n, C] normalized."""
        inputs = np.atleast_3d(inputs)
        out = np.empty((inputs.shape[0], self.config.horizon_len, len(self.config.channels)))
        for i in range(inputs.shape[0]):
            states = self.encode(inputs[i], int(day_of_week[i]))
            out[i] = self.generate_forecast(states).value
        return np.maximum(denormalize_values(out, self.norm), 0.0)

    def type_accuracy(self, inputs: np.ndarray, day_of_week: np.ndarray) -> float:
        """Fraction of reconstructed streams classified as their own channel."""
        hits = 0
        total = 0
        for i in range(inputs.shape[0]):
            states = self.encode(inputs[i], int(day_of_week[i]))
            _, logits, _ = self.decode_reconstruct(states, inputs[i])
            for j, lg in enumerate(logits):
                hits += int(np.argmax(lg.value) == j)
                total += 1
        return hits / total

    # ------------------------------------------------------------ training

    def train(self, train_ds: WindowedDataset, val_ds: WindowedDataset,
              cfg: TrainConfig) -> list[dict]:
        return _train_model(self, train_ds, val_ds, cfg, use_aux_losses=True)

    # --------------------------------------------------------- persistence

    def save(self, path: str | Path) -> None:
        path = Path(path)
        arrays = {k: t.value for k, t in self.params.items()}
        checkpoint.save_arrays(path, arrays)
        sidecar = {
            "kind": "seq2seq",
            "model_config": asdict(self.config),
            "normalization": self.norm.to_dict(),
            "config_hash": _config_hash(asdict(self.config)),
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=2)
        )

    @classmethod
    def load(cls, path: str | Path) -> "Seq2SeqForecaster":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        mc = sidecar["model_config"]
        mc["channels"] = tuple(mc["channels"])
        model = cls(ModelConfig(**mc), NormalizationParams.from_dict(sidecar["normalization"]))
        arrays = checkpoint.load_arrays(path)
        for k, t in model.params.items():
            t.value = arrays[k]
        return model


class LstmBaselineForecaster:
    """Two-layer LSTM reading the history, with a direct linear head that
    emits the whole m-step forecast at once."""

    def __init__(self, config: ModelConfig, norm: NormalizationParams, seed: int = 0):
        self.config = config
        self.norm = norm
        rng = np.random.default_rng(seed)
        C = len(config.channels)
        H = config.encoder_hidden
        de = config.dow_embed_dim
        m = config.horizon_len
        p: dict[str, Tensor] = {}
        _register(p, "l1", LstmCellParams.init(rng, C, H))
        _register(p, "l2", LstmCellParams.init(rng, H, H))
        p["dow_embed"] = tape.param(rng.uniform(-0.1, 0.1, (7, de)))
        p["head_W"] = tape.param(rng.uniform(-1, 1, (H + de, m * C)) / np.sqrt(H + de))
        p["head_b"] = tape.param(np.zeros(m * C))
        self.params = p

    def _forward(self, window: np.ndarray, day_of_week: int) -> Tensor:
        p = self.params
        n = self.config.history_len
        H = self.config.encoder_hidden
        zeros = tape.constant(np.zeros(H))
        x = tape.constant(np.ascontiguousarray(window))
        hs1 = tape.lstm_seq(x, zeros, zeros, p["l1_W"], p["l1_U"], p["l1_b"])
        hs2 = tape.lstm_seq(hs1, zeros, zeros, p["l2_W"], p["l2_U"], p["l2_b"])
        emb = tape.embedding_row(p["dow_embed"], int(day_of_week) % 7)
        feat = tape.concat([tape.row(hs2, n - 1), emb])
        return tape.add(tape.matmul(feat, p["head_W"]), p["head_b"])

    def window_loss(self, window, day_of_week, target, cfg: TrainConfig):
        out = self._forward(window, day_of_week)
        loss = tape.mse_loss(out, target.ravel())
        return loss, {"forecast": float(loss.value)}

    def predict(self, inputs: np.ndarray, day_of_week: np.ndarray) -> np.ndarray:
        m, C = self.config.horizon_len, len(self.config.channels)
        out = np.empty((inputs.shape[0], m, C))
        for i in range(inputs.shape[0]):
            out[i] = self._forward(inputs[i], int(day_of_week[i])).value.reshape(m, C)
        return np.maximum(denormalize_values(out, self.norm), 0.0)

    def train(self, train_ds, val_ds, cfg: TrainConfig) -> list[dict]:
        return _train_model(self, train_ds, val_ds, cfg, use_aux_losses=False)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        checkpoint.save_arrays(path, {k: t.value for k, t in self.params.items()})
        sidecar = {
            "kind": "lstm",
            "model_config": asdict(self.config),
            "normalization": self.norm.to_dict(),
            "config_hash": _config_hash(asdict(self.config)),
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=2)
        )

    @classmethod
    def load(cls, path: str | Path) -> "LstmBaselineForecaster":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        mc = sidecar["model_config"]
        mc["channels"] = tuple(mc["channels"])
        model = cls(ModelConfig(**mc), NormalizationParams.from_dict(sidecar["normalization"]))
        arrays = checkpoint.load_arrays(path)
        for k, t in model.params.items():
            t.value = arrays[k]
        return model


def persistence_predict(window: np.ndarray, m: int) -> np.ndarray:
    """Repeat the last observed value of each channel for all m steps."""
    window = np.atleast_2d(window)
    return np.tile(window[-1], (m, 1))


def _train_model(model, train_ds: WindowedDataset, val_ds: WindowedDataset,
                 cfg: TrainConfig, use_aux_losses: bool) -> list[dict]:
    """Shared epoch loop: minibatch Adam with gradient clipping and early
    stopping on validation wMAPE (watt scale)."""
    if train_ds.num_windows == 0 or val_ds.num_windows == 0:
        raise EmptyDataset("train and validation datasets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState(lr=cfg.lr)
    trace: list[dict] = []
    best_val = np.inf
    best_arrays: dict[str, np.ndarray] | None = None
    stale = 0

    val_idx = np.arange(val_ds.num_windows)
    if cfg.val_windows is not None and val_ds.num_windows > cfg.val_windows:
        val_idx = np.sort(rng.choice(val_ds.num_windows, cfg.val_windows, replace=False))
    val_actual = denormalize_values(val_ds.targets[val_idx], model.norm)

    for epoch in range(cfg.epochs):
        order = rng.permutation(train_ds.num_windows)
        if cfg.windows_per_epoch is not None:
            order = order[: cfg.windows_per_epoch]
        epoch_loss = 0.0
        count = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            for t in model.params.values():
                t.zero_grad()
            batch_loss = 0.0
            for w in batch:
                loss, _ = model.window_loss(
                    train_ds.inputs[w], int(train_ds.day_of_week[w]),
                    train_ds.targets[w], cfg,
                )
                if not np.isfinite(loss.value):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch}")
                tape.backward(loss)
                batch_loss += float(loss.value)
            grads = {k: tape.grad_or_zero(t) / len(batch) for k, t in model.params.items()}
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(opt, {k: t.value for k, t in model.params.items()}, grads)
            epoch_loss += batch_loss
            count += len(batch)

        pred = model.predict(val_ds.inputs[val_idx], val_ds.day_of_week[val_idx])
        val_wmape = pooled_wmape(val_actual, pred)
        trace.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(count, 1),
            "val_wmape": val_wmape,
        })
        if val_wmape < best_val:
            best_val = val_wmape
            best_arrays = {k: t.value.copy() for k, t in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best_arrays is not None:
        for k, t in model.params.items():
            t.value = best_arrays[k]
    return trace


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]
