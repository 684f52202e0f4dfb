"""Boundary formats: mono WAV, CSV exports, run config, checkpoints.

All writers go through a temp-file-and-rename so no partial output is ever
left behind.  Floats in CSVs are printed with 9 significant digits so
re-exports of identical data are byte-identical.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from . import dsp
from .dsp import FeatureStats
from .signals import SourceSignal
from .vae import VAEModel

CHECKPOINT_MAGIC = "cardiosep-checkpoint"
CHECKPOINT_VERSION = 1


class WavError(Exception):
    pass


class WavFormatError(WavError):
    pass


class WavParseError(WavError):
    pass


class CheckpointError(Exception):
    pass


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# WAV

def write_wav(path, signal, encoding: str = "float32"):
    """Write a mono RIFF/WAVE file (PCM16 or IEEE float32)."""
    samples = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    rate = int(round(getattr(signal, "sample_rate")))
    if samples.size and np.max(np.abs(samples)) > 1.0 + 1e-12:
        raise ValueError("samples must lie in [-1, 1]")
    if encoding == "float32":
        fmt_tag, bits = 3, 32
        data = samples.astype("<f4").tobytes()
    elif encoding == "pcm16":
        fmt_tag, bits = 1, 16
        data = np.clip(np.round(samples * 32768.0), -32768, 32767) \
            .astype("<i2").tobytes()
    else:
        raise WavFormatError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, rate, rate * block_align,
                      block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    if fmt_tag == 3:
        chunks += b"fact" + struct.pack("<II", 4, samples.size)
    chunks += b"data" + struct.pack("<I", len(data)) + data
    if len(data) % 2:
        chunks += b"\x00"
    _atomic_write(path, b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)


def read_wav(path) -> SourceSignal:
    """Read a mono PCM16 or IEEE-float32 RIFF/WAVE file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavParseError("not a RIFF/WAVE file (header at byte 0)")
    offset = 12
    fmt_info = None
    data = None
    while offset < len(raw):
        if offset + 8 > len(raw):
            raise WavParseError(f"truncated chunk header at byte {offset}")
        cid = raw[offset:offset + 4]
        size = struct.unpack_from("<I", raw, offset + 4)[0]
        body_start = offset + 8
        if body_start + size > len(raw):
            raise WavParseError(f"truncated chunk {cid!r} at byte {offset}: "
                                f"need {size} bytes, have {len(raw) - body_start}")
        body = raw[body_start:body_start + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavParseError(f"fmt chunk too small at byte {offset}")
            fmt_info = struct.unpack_from("<HHIIHH", body)
        elif cid == b"data":
            data = body
        offset = body_start + size + (size % 2)
    if fmt_info is None:
        raise WavParseError("missing fmt chunk")
    if data is None:
        raise WavParseError("missing data chunk")
    fmt_tag, channels, rate, _, _, bits = fmt_info
    if channels != 1:
        raise WavFormatError(f"unsupported channel count {channels}; only mono")
    if fmt_tag == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif fmt_tag == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"unsupported encoding: format tag {fmt_tag}, {bits} bits")
    return SourceSignal(samples, float(rate), kind="other")


# --------------------------------------------------------------------------
# Run configuration

@dataclass
class RunConfig:
    sample_rate: float = 4000.0
    duration: float = 60.0
    n_fft: int = 256
    hop: int = 64
    floor: float = 1e-5
    latent_dim: int = 8
    hidden: tuple = (64, 32)
    beta: float = 1.0
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    snapshot_stride: int = 10
    clusters: int = 2
    perplexity: float = 30.0
    tsne_iters: int = 1000
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        positive = ("sample_rate", "duration", "n_fft", "hop", "floor", "latent_dim",
                    "beta", "lr", "batch_size", "epochs", "snapshot_stride",
                    "clusters", "perplexity", "tsne_iters", "restarts")
        for name in positive:
            value = getattr(self, name)
            if (name == "beta" and value < 0) or (name != "beta" and value <= 0):
                raise ValueError(f"config field {name} must be positive, got {value}")
        if self.hop > self.n_fft:
            raise ValueError(f"hop {self.hop} exceeds n_fft {self.n_fft}")
        if any(h <= 0 for h in self.hidden):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}")


def _parse_config_value(name, text, kind):
    if name == "hidden":
        return tuple(int(v) for v in text.split(","))
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    raise ValueError(f"cannot parse config field {name}")


def load_config(path) -> RunConfig:
    """Parse a flat `key = value` config file; unknown keys are an error."""
    known = {f.name: f.type for f in fields(RunConfig)}
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_config_value(key, value.strip(), kinds[key])
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "hidden":
            value = ",".join(str(h) for h in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# CSV export

def _fmt(x) -> str:
    return format(float(x), ".9g")


def export_csv(kind: str, data, path):
    """Serialize analysis outputs to CSV; deterministic byte-for-byte."""
    if kind == "losses":
        lines = ["epoch,recon,kl,total"]
        for epoch, item in enumerate(data, 1):
            lines.append(f"{epoch},{_fmt(item.recon)},{_fmt(item.kl)},{_fmt(item.total)}")
    elif kind == "embedding":
        lines = ["frame_index,x,y,cluster,true_label,epoch"]
        for frame, x, y, cluster, true_label, epoch in data:
            label = "" if true_label is None else str(int(true_label))
            lines.append(f"{int(frame)},{_fmt(x)},{_fmt(y)},{int(cluster)},{label},{int(epoch)}")
    elif kind == "spectrogram":
        floor = dsp.DEFAULT_FLOOR
        mag_db = 20.0 * np.log10(np.maximum(np.abs(data.bins), floor))
        lines = ["frame,bin,magnitude_db"]
        for t in range(mag_db.shape[1]):
            for b in range(mag_db.shape[0]):
                lines.append(f"{t},{b},{_fmt(mag_db[b, t])}")
    elif kind == "report":
        lines = ["source,matched_reference,si_sdr_db,si_sdr_improvement_db,lsd_db,purity"]
        pur = "" if data.purity is None else _fmt(data.purity)
        for i, metrics in enumerate(data.per_source):
            lines.append(f"{i},{data.permutation[i]},{_fmt(metrics.si_sdr_db)},"
                         f"{_fmt(metrics.si_sdr_improvement_db)},{_fmt(metrics.lsd_db)},{pur}")
    elif kind == "labels":
        lines = ["frame,label"]
        for t, label in enumerate(np.asarray(data)):
            lines.append(f"{t},{int(label)}")
    elif kind == "latent":
        epoch, mu = data
        k = mu.shape[1]
        lines = ["frame_index,epoch," + ",".join(f"mu_{i}" for i in range(k))]
        for t in range(mu.shape[0]):
            coords = ",".join(_fmt(v) for v in mu[t])
            lines.append(f"{t},{int(epoch)},{coords}")
    elif kind == "masks":
        masks = np.asarray(data)
        lines = ["source,frame,bin,mask"]
        n_sources, n_bins, n_frames = masks.shape
        for i in range(n_sources):
            for t in range(n_frames):
                for b in range(n_bins):
                    lines.append(f"{i},{t},{b},{_fmt(masks[i, b, t])}")
    else:
        raise ValueError(f"unknown CSV kind {kind!r}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# --------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, model: VAEModel, stats: FeatureStats, cfg: RunConfig,
                    epoch: int):
    """Single-file checkpoint: text header + named row-major float64 blocks."""
    header = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
              f"epoch {int(epoch)}",
              f"input_dim {model.input_dim}"]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "hidden":
            value = ",".join(str(h) for h in value)
        header.append(f"config {f.name} {value}")

    blocks = []
    for params in (model.encoder.params, model.decoder.params):
        for name, var in params.items():
            blocks.append((name, np.atleast_2d(var.value)))
    blocks.append(("stats.mean", stats.mean[None, :]))
    blocks.append(("stats.std", stats.std[None, :]))

    payload = ("\n".join(header) + f"\nblocks {len(blocks)}\n").encode("ascii")
    for name, value in blocks:
        payload += f"block {name} {value.shape[0]} {value.shape[1]}\n".encode("ascii")
        payload += value.astype("<f8").tobytes()
        payload += b"\n"
    _atomic_write(path, payload)


def _read_line(raw, offset):
    end = raw.find(b"\n", offset)
    if end < 0:
        raise CheckpointError(f"truncated checkpoint at byte {offset}")
    return raw[offset:end].decode("ascii", errors="replace"), end + 1


def load_checkpoint(path):
    """Inverse of save_checkpoint; bit-exact on parameters and stats."""
    with open(path, "rb") as fh:
        raw = fh.read()
    line, offset = _read_line(raw, 0)
    parts = line.split()
    if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {line!r}")
    version = int(parts[1])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}; this build reads "
            f"version {CHECKPOINT_VERSION}")

    epoch = None
    input_dim = None
    config_values = {}
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    n_blocks = None
    while n_blocks is None:
        line, offset = _read_line(raw, offset)
        parts = line.split(None, 2)
        if parts[0] == "epoch":
            epoch = int(parts[1])
        elif parts[0] == "input_dim":
            input_dim = int(parts[1])
        elif parts[0] == "config":
            config_values[parts[1]] = _parse_config_value(parts[1], parts[2],
                                                          kinds[parts[1]])
        elif parts[0] == "blocks":
            n_blocks = int(parts[1])
        else:
            raise CheckpointError(f"unexpected header line {line!r}")
    if epoch is None or input_dim is None:
        raise CheckpointError("checkpoint header missing epoch or input_dim")
    cfg = RunConfig(**config_values)

    block_values = {}
    for _ in range(n_blocks):
        line, offset = _read_line(raw, offset)
        parts = line.split()
        if len(parts) != 4 or parts[0] != "block":
            raise CheckpointError(f"bad block header {line!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        nbytes = rows * cols * 8
        if offset + nbytes + 1 > len(raw):
            raise CheckpointError(
                f"truncated block {name!r} at byte {offset}: need {nbytes} bytes")
        block_values[name] = np.frombuffer(
            raw[offset:offset + nbytes], dtype="<f8").reshape(rows, cols).copy()
        offset += nbytes
        if raw[offset:offset + 1] != b"\n":
            raise CheckpointError(f"missing block terminator at byte {offset}")
        offset += 1

    model = VAEModel(input_dim, cfg.latent_dim, cfg.hidden, cfg.beta, rng=None)
    for params in (model.encoder.params, model.decoder.params):
        for name, var in params.items():
            if name not in block_values:
                raise CheckpointError(f"checkpoint missing parameter block {name!r}")
            value = block_values[name].reshape(var.value.shape) \
                if block_values[name].size == var.value.size else None
            if value is None:
                raise CheckpointError(
                    f"block {name!r} has {block_values[name].size} values, "
                    f"expected {var.value.size}")
            var.value[...] = value
    for key in ("stats.mean", "stats.std"):
        if key not in block_values:
            raise CheckpointError(f"checkpoint missing block {key!r}")
    stats = FeatureStats(block_values["stats.mean"][0], block_values["stats.std"][0])
    return model, stats, cfg, epoch
