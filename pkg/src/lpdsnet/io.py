"""File formats: CFLD complex field dumps, sample files, checkpoints, PGM exports.

CFLD layout (little-endian)::

    b"CFLD" | u32 version=1 | u32 rank | rank x u64 dims | u8 dtype | payload

``dtype`` is 0 for complex64 and 1 for complex128; the payload is interleaved
(re, im) in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .mri import CoilSensitivities, EncodingOperator, KSpaceObservation, SamplingMask
from .nets import kind_of, params_from_tensors
from .simdata import TrainSample
from .training import AdamState

__all__ = [
    "write_cfld",
    "read_cfld",
    "encode_cfld",
    "decode_cfld",
    "save_sample",
    "load_sample",
    "save_checkpoint",
    "load_checkpoint",
    "write_pgm",
    "read_manifest",
    "FormatError",
]

MAGIC = b"CFLD"
VERSION = 1
_DTYPES = {0: np.dtype("<c8"), 1: np.dtype("<c16")}


class FormatError(ValueError):
    pass


def encode_cfld(arr) -> bytes:
    if isinstance(arr, Tensor):
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr)
    if arr.dtype == np.complex64:
        code = 0
    else:
        code = 1
        arr = arr.astype(np.complex128, copy=False)
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    head += struct.pack("<B", code)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_cfld(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError("not a CFLD blob (bad magic)")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CFLD version {version}")
    dims = struct.unpack_from(f"<{rank}Q", buf, 12)
    off = 12 + 8 * rank
    code = buf[off]
    if code not in _DTYPES:
        raise FormatError(f"unknown CFLD dtype code {code}")
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64))
    payload = buf[off + 1 :]
    if len(payload) != n * dt.itemsize:
        raise FormatError("CFLD payload size does not match its header")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def write_cfld(path, arr) -> None:
    Path(path).write_bytes(encode_cfld(arr))


def read_cfld(path) -> np.ndarray:
    return decode_cfld(Path(path).read_bytes())


# Sample files stack [y (C), unit noise (C), sensitivities (C), mask, ground truth]
# into one (3C + 2, H, W) complex128 field.


def save_sample(path, sample: TrainSample) -> None:
    C = sample.encoder.sens.coils
    H, W = sample.encoder.image_shape
    noise = sample.noise if sample.noise is not None else torch.zeros(C, H, W, dtype=torch.complex128)
    gt = sample.ground_truth if sample.ground_truth is not None else torch.zeros(H, W, dtype=torch.complex128)
    stack = torch.cat([
        sample.observation.data,
        noise,
        sample.encoder.sens.maps,
        sample.observation.mask.mask.to(torch.complex128)[None],
        gt[None],
    ]).to(torch.complex128)
    write_cfld(path, stack)


def load_sample(path, sigma: float = 0.0, has_ground_truth: bool = True, center_rows=None) -> TrainSample:
    arr = torch.from_numpy(read_cfld(path))
    if arr.ndim != 3 or (arr.shape[0] - 2) % 3 or arr.shape[0] < 5:
        raise FormatError(f"{path}: not a sample file (shape {tuple(arr.shape)})")
    C = (arr.shape[0] - 2) // 3
    y, noise, sens = arr[:C], arr[C : 2 * C], arr[2 * C : 3 * C]
    mask = SamplingMask(arr[3 * C].real != 0, None if center_rows is None else tuple(center_rows))
    E = EncodingOperator(mask, CoilSensitivities(sens.clone()))
    gt = arr[3 * C + 1].clone() if has_ground_truth else None
    obs = KSpaceObservation(y.clone(), mask, float(sigma))
    return TrainSample(obs, E, gt, float(sigma), noise.clone())


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


# Checkpoints are directories: manifest.txt (key = value) plus one CFLD blob
# per tensor. Real tensors are stored as complex128 with zero imaginary part.

_CKPT_KEYS = ("net_kind", "K", "M", "p", "s", "step", "seed", "adam_step", "dtype")


def save_checkpoint(directory, params, step: int, seed: int, adam: AdamState | None = None, extra=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = params.tensors()
    meta = {
        "net_kind": kind_of(params),
        "K": params.layers,
        "M": params.subbands,
        "p": params.kernel_size,
        "s": params.stride,
        "step": step,
        "seed": seed,
        "adam_step": adam.step if adam else 0,
        "dtype": str(params.A.dtype).replace("torch.", ""),
    }
    meta.update(extra or {})
    lines = [f"{k} = {meta[k]}" for k in meta]
    names = sorted(tensors)
    lines.append("tensors = " + ",".join(names))
    blobs = {f"param.{n}.cfld": tensors[n] for n in names}
    if adam is not None:
        for n in sorted(adam.m):
            blobs[f"adam_m.{n}.cfld"] = _as_complex(adam.m[n], tensors[n])
            blobs[f"adam_v.{n}.cfld"] = _as_complex(adam.v[n], tensors[n])
    for fname in sorted(blobs):
        write_cfld(d / fname, blobs[fname].detach().to(torch.complex128))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    return d


def _as_complex(state: Tensor, like: Tensor) -> Tensor:
    return torch.view_as_complex(state.contiguous()) if like.is_complex() else state


def _parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"malformed manifest line: {line!r}")
        out[k.strip()] = v.strip()
    return out


def load_checkpoint(directory):
    """Return ``(params, meta, adam_state)``."""
    d = Path(directory)
    mf = d / "manifest.txt"
    if not mf.exists():
        raise FormatError(f"{d} is not a checkpoint directory")
    meta = _parse_kv(mf.read_text())
    missing = [k for k in _CKPT_KEYS if k not in meta]
    if missing:
        raise FormatError(f"checkpoint manifest lacks {missing}")
    cdt = getattr(torch, meta["dtype"])
    rdt = torch.empty((), dtype=cdt).real.dtype
    tensors = {}
    kinds = {}
    for n in meta["tensors"].split(","):
        arr = torch.from_numpy(read_cfld(d / f"param.{n}.cfld"))
        complex_param = n in ("A", "B", "D")
        kinds[n] = complex_param
        tensors[n] = arr.to(cdt) if complex_param else arr.real.to(rdt).contiguous()
    params = params_from_tensors(meta["net_kind"], tensors, int(meta["s"]))
    adam = AdamState(step=int(meta["adam_step"]))
    for n in tensors:
        fm, fv = d / f"adam_m.{n}.cfld", d / f"adam_v.{n}.cfld"
        if fm.exists() and fv.exists():
            m = torch.from_numpy(read_cfld(fm))
            v = torch.from_numpy(read_cfld(fv))
            if kinds[n]:
                adam.m[n] = torch.view_as_real(m.to(cdt)).clone()
                adam.v[n] = torch.view_as_real(v.to(cdt)).clone()
            else:
                adam.m[n] = m.real.to(rdt).contiguous()
                adam.v[n] = v.real.to(rdt).contiguous()
    return params, meta, adam


def write_pgm(path, image) -> float:
    """16-bit binary PGM of ``|image|`` scaled so the maximum maps to 65535.

    The scale factor (magnitude per gray level) is written to ``<path>.scale.txt``
    and returned.
    """
    mag = np.abs(image.detach().cpu().numpy() if isinstance(image, Tensor) else np.asarray(image))
    peak = float(mag.max())
    scale = peak / 65535.0 if peak > 0 else 1.0
    q = np.clip(np.rint(mag / scale), 0, 65535).astype(">u2")
    H, W = q.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n65535\n".encode() + q.tobytes())
    Path(str(path) + ".scale.txt").write_text(f"scale = {scale!r}\n")
    return scale
