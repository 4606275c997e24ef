"""Flat float64 parameter records with a JSON manifest.

A record directory holds ``manifest.json`` and ``params.bin``. The binary is
the concatenation of little-endian float64 arrays in manifest order; each
manifest entry gives ``name``, ``shape`` and ``offset`` (in values).
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .duration import SDPConfig, StochasticDurationPredictor
from .flows import FlowStack
from .optim import OptimizerState

FORMAT = "vitscore-params-v1"


def save_record(directory: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    manifest = {"format": FORMAT, **meta, "arrays": entries}
    (out / "params.bin").write_bytes(b"".join(chunks))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_record(directory: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    src = Path(directory)
    manifest_path, bin_path = src / "manifest.json", src / "params.bin"
    if not manifest_path.is_file() or not bin_path.is_file():
        raise FileNotFoundError(f"{src}: missing manifest.json or params.bin")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{src}: unsupported format {manifest.get('format')!r}")
    flat = np.frombuffer(bin_path.read_bytes(), dtype="<f8")
    arrays = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > flat.size:
            raise ValueError(f"{src}: array {e['name']} runs past the end of params.bin")
        arrays[e["name"]] = flat[e["offset"] : e["offset"] + n].reshape(e["shape"]).copy()
    return manifest, arrays


def save_flow_stack(directory: str | Path, stack: FlowStack) -> None:
    save_record(directory, {"kind": "flow_stack", "layers": stack.config()}, stack.state_dict())


def load_flow_stack(directory: str | Path) -> FlowStack:
    manifest, arrays = load_record(directory)
    stack = FlowStack.from_config(manifest["layers"])
    stack.load_state_dict(arrays)
    return stack


_OPT_SCALARS = ("learning_rate", "beta1", "beta2", "weight_decay", "eps", "lr_decay_per_epoch",
                "step_count", "epoch")


def save_sdp_checkpoint(directory: str | Path, model: StochasticDurationPredictor,
                        opt: OptimizerState | None = None, extra: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    meta = {
        "kind": "sdp_checkpoint",
        "sdp_config": asdict(model.config),
        "flow_layers": model.flow.config(),
        "post_flow_layers": model.post_flow.config(),
    }
    if opt is not None:
        meta["optimizer"] = {k: getattr(opt, k) for k in _OPT_SCALARS}
        for k in opt.exp_avg:
            arrays[f"adam_m/{k}"] = opt.exp_avg[k]
            arrays[f"adam_v/{k}"] = opt.exp_avg_sq[k]
    if extra:
        meta.update(extra)
    save_record(directory, meta, arrays)


def load_sdp_checkpoint(directory: str | Path) -> tuple[StochasticDurationPredictor, OptimizerState | None, dict]:
    manifest, arrays = load_record(directory)
    if manifest.get("kind") != "sdp_checkpoint":
        raise ValueError(f"{directory}: not a duration-predictor checkpoint")
    model = StochasticDurationPredictor(SDPConfig(**manifest["sdp_config"]))
    model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    opt = None
    if "optimizer" in manifest:
        opt = OptimizerState(**manifest["optimizer"])
        for k, v in arrays.items():
            if k.startswith("adam_m/"):
                opt.exp_avg[k[len("adam_m/"):]] = v
            elif k.startswith("adam_v/"):
                opt.exp_avg_sq[k[len("adam_v/"):]] = v
    return model, opt, manifest
