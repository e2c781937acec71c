"""Command-line entry point: forge, train, sample, rerender, eval, gradcheck.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then flags. The merged result is written to
``config.txt`` in the command's output directory.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import torch

from . import geometry as geo
from . import metrics
from .backbone import Backbone, ModelConfig, PromptSpec
from .flow import GuidanceWeights
from .inference import DEFAULT_STEPS, generate, rerender
from .scene.dataset import Dataset, DatasetError, forge_dataset
from .scene.render import default_intrinsics
from .sync import SyncModel
from .tensorio import FormatError, load_tensor, read_container, save_tensor, write_container
from .trainer import (
    CheckpointError,
    ConfigError,
    DataPipeline,
    TrainConfig,
    Trainer,
    desk_gradcheck,
    load_checkpoint,
    load_model,
    pretrain_base,
)


class UsageError(ValueError):
    pass


def parse_bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


def float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(s).split(",") if x.strip())


@dataclass(frozen=True)
class Key:
    type: Callable[[str], Any]
    default: Any
    help: str = ""


MODEL_KEYS = {
    "patch": Key(int, 4, "patch size"),
    "dim": Key(int, 64, "token width"),
    "heads": Key(int, 2, "attention heads"),
    "blocks": Key(int, 2, "transformer blocks"),
    "camera_repr": Key(str, "extrinsic", "extrinsic or plucker"),
    "attn_mode": Key(str, "view", "view, full or epipolar"),
}

COMMANDS: dict[str, dict[str, Key]] = {
    "forge": {
        "out": Key(str, None, "dataset directory"),
        "scenes": Key(int, 64), "cams": Key(int, 8), "frames": Key(int, 8),
        "height": Key(int, 32), "width": Key(int, 32), "seed": Key(int, 7),
        "trajectories": Key(int, 8), "traj_frames": Key(int, 32), "general": Key(int, 8),
    },
    "train": {
        "data": Key(str, None, "dataset directory"), "out": Key(str, None, "run directory"),
        "steps": Key(int, 2000), "batch": Key(int, 4), "lr": Key(float, 1e-4),
        "probs": Key(float_list, (0.6, 0.2, 0.2)), "views": Key(int_list, (2, 4)),
        "v2mv": Key(parse_bool, False), "p_replace": Key(float, 0.9), "p_uncond": Key(float, 0.1),
        "loss_on_reference": Key(parse_bool, True), "seed": Key(int, 0),
        "base": Key(str, "", "pretrained base container; empty pretrains one"),
        "base_steps": Key(int, 2000), "base_lr": Key(float, 1e-3),
        "checkpoint_every": Key(int, 500), "resume": Key(str, "", "checkpoint to continue from"),
        **MODEL_KEYS,
    },
    "sample": {
        "checkpoint": Key(str, None), "out": Key(str, None),
        "cams": Key(str, "", "cams file (12 floats per line)"),
        "dataset": Key(str, "", "generate for every scene of this dataset instead"),
        "views": Key(int, 4, "cameras per scene in dataset mode"),
        "prompt": Key(str, ""), "frames": Key(int, 8), "steps": Key(int, DEFAULT_STEPS),
        "text_scale": Key(float, 1.0), "seed": Key(int, 0),
        "shared_noise": Key(parse_bool, False, "start every view from the same noise"),
    },
    "rerender": {
        "checkpoint": Key(str, None), "out": Key(str, None),
        "input": Key(str, None, "reference video (f, c, h, w) tensor file"),
        "cams": Key(str, None, "cams file; line 1 is the reference camera"),
        "prompt": Key(str, ""), "s_video": Key(float, 1.8), "s_text": Key(float, 7.5),
        "steps": Key(int, DEFAULT_STEPS), "seed": Key(int, 0),
        "shared_noise": Key(parse_bool, False, "start every view from the same noise"),
        "keep": Key(int_list, (), "views to write (default all)"),
    },
    "eval": {
        "gen": Key(str, None, "generated directory"), "data": Key(str, None, "dataset directory"),
        "out": Key(str, "", "report path (default <gen>/report.json)"),
        "tol": Key(float, 0.1), "matcher": Key(str, "gt", "gt or block"),
    },
    "gradcheck": {
        "probes": Key(int, 50), "seed": Key(int, 0), "perturb": Key(float, 0.15),
        "tol": Key(float, 1e-4), "out": Key(str, ""),
    },
}


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(command: str, file_values: dict[str, str], flag_values: dict[str, Any]) -> dict[str, Any]:
    """defaults < config file < flags; unknown keys and missing required keys are usage errors."""
    keys = COMMANDS[command]
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise UsageError(f"unknown {command} setting(s): {', '.join(unknown)}")
    cfg = {}
    for name, key in keys.items():
        if flag_values.get(name) is not None:
            raw = flag_values[name]
        elif name in file_values:
            raw = file_values[name]
        else:
            cfg[name] = key.default
            continue
        try:
            cfg[name] = key.type(raw) if isinstance(raw, str) else raw
        except ValueError as e:
            raise UsageError(f"bad value for {name}: {raw!r} ({e})") from None
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise UsageError(f"{command}: missing required setting(s): {', '.join(missing)}")
    return cfg


def format_config(command: str, cfg: dict) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        return str(v).lower() if isinstance(v, bool) else str(v)
    return f"# {command}\n" + "".join(f"{k} = {fmt(v)}\n" for k, v in sorted(cfg.items()))


def echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(command, cfg))


# ---------------------------------------------------------------------------
# file helpers


def read_cams_file(path, h: int, w: int) -> geo.CameraRig:
    cams = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(x) for x in line.split()]
            cams.append(geo.unflatten_extrinsics(vals))
        except (ValueError, geo.GeometryError) as e:
            raise UsageError(f"{path}:{n}: camera line needs 12 numbers with a rotation ({e})") from None
    if not cams:
        raise UsageError(f"{path}: no cameras")
    return geo.CameraRig(tuple(cams), default_intrinsics(h, w))


def write_cams_file(path, rig: geo.CameraRig) -> None:
    lines = [" ".join(repr(float(x)) for x in geo.flatten_extrinsics(c)) for c in rig.cameras]
    Path(path).write_text("\n".join(lines) + "\n")


def write_ppm(path, img: np.ndarray) -> None:
    """Binary PPM from a (3, h, w) image in [0, 1]."""
    c, h, w = img.shape
    data = (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_grids(out_dir: Path, videos: np.ndarray) -> None:
    """One image per frame with the views side by side."""
    n, f = videos.shape[:2]
    for k in range(f):
        write_ppm(out_dir / f"frame_{k:03d}.ppm", np.concatenate(list(videos[:, k]), axis=2))


def model_config(cfg: dict, h: int, w: int) -> ModelConfig:
    return ModelConfig(height=h, width=w, patch=cfg["patch"], dim=cfg["dim"], heads=cfg["heads"],
                       blocks=cfg["blocks"])


def load_checkpoint_model(path) -> SyncModel:
    try:
        sections, meta = read_container(path)
        return load_model(sections, meta)
    except (FormatError, OSError, KeyError) as e:
        raise CheckpointError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# commands


def cmd_forge(cfg: dict) -> int:
    if cfg["scenes"] < 1 or cfg["cams"] < 1 or cfg["frames"] < 1:
        raise UsageError("scenes, cams and frames must be positive")
    out = Path(cfg["out"])
    result = forge_dataset(out, scenes=cfg["scenes"], cams=cfg["cams"], frames=cfg["frames"],
                           res=(cfg["height"], cfg["width"]), seed=cfg["seed"],
                           trajectories=cfg["trajectories"], traj_frames=cfg["traj_frames"],
                           general=cfg["general"])
    echo_config(out, "forge", cfg)
    for m in result["manifests"]:
        print(f"{m['scene_id']}  cams={len(m['cameras'])} frames={m['frames']}  {m['prompt']}")
    return 0


def save_base(path, backbone: Backbone, meta: dict) -> None:
    sections = {"base": {k: v.detach().numpy().astype(np.float64) for k, v in backbone.state_dict().items()}}
    write_container(path, sections, {"model_config": backbone.cfg.to_dict(), **meta})


def load_base(path) -> Backbone:
    sections, meta = read_container(path)
    backbone = Backbone(ModelConfig(**meta["model_config"])).double()
    backbone.load_state_dict({k: torch.tensor(v) for k, v in sections["base"].items()})
    return backbone


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    try:
        ds = Dataset(cfg["data"])
    except DatasetError as e:
        raise UsageError(str(e)) from None
    echo_config(out, "train", cfg)
    tcfg = TrainConfig(total_steps=cfg["steps"], batch_size=cfg["batch"], learning_rate=cfg["lr"],
                       source_probs=cfg["probs"], v2mv_mode=cfg["v2mv"], p_replace=cfg["p_replace"],
                       seed=cfg["seed"], views=cfg["views"], p_uncond=cfg["p_uncond"],
                       loss_on_reference=cfg["loss_on_reference"])
    log_path = out / "loss.log"
    if cfg["resume"]:
        trainer = load_checkpoint(cfg["resume"])
        trainer.pipeline = DataPipeline(ds, trainer.cfg, trainer.model.cfg)
        trainer.cfg.total_steps = tcfg.total_steps
        lines = log_path.read_text().splitlines() if log_path.exists() else []
        keep = [l for l in lines if l.startswith("base") or int(l.split()[1]) <= trainer.step]
        log_path.write_text("".join(l + "\n" for l in keep))
    else:
        log_path.write_text("")
        torch.manual_seed(cfg["seed"])
        rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
        if cfg["base"]:
            backbone = load_base(cfg["base"])
        else:
            backbone = Backbone(model_config(cfg, *ds.res)).double()
            with open(log_path, "a") as fh:
                pretrain_base(backbone, ds, cfg["base_steps"], rng, lr=cfg["base_lr"], batch_size=cfg["batch"],
                              p_uncond=cfg["p_uncond"],
                              on_step=lambda k, l: fh.write(f"base {k + 1} {l:.17g}\n"))
            save_base(out / "base.scmc", backbone, {"steps": cfg["base_steps"], "seed": cfg["seed"]})
        model = SyncModel(backbone.freeze(), cfg["camera_repr"], cfg["attn_mode"])
        trainer = Trainer(model, tcfg, DataPipeline(ds, tcfg, model.cfg))
    every = cfg["checkpoint_every"]
    with open(log_path, "a") as fh:
        while trainer.step < tcfg.total_steps:
            loss = trainer.train_one()
            fh.write(f"mvs {trainer.step} {loss:.17g}\n")
            fh.flush()
            if every and trainer.step % every == 0:
                trainer.save(out / f"ckpt_{trainer.step:06d}.scmc")
    trainer.verify_frozen()
    trainer.save(out / "final.scmc")
    print(f"trained {trainer.step} steps; final checkpoint {out / 'final.scmc'}")
    return 0


def _prompt(text: str, cfg: ModelConfig) -> Optional[PromptSpec]:
    return PromptSpec.from_text(text, cfg.vocab, cfg.max_prompt) if text else None


def cmd_sample(cfg: dict) -> int:
    model = load_checkpoint_model(cfg["checkpoint"])
    mc = model.cfg
    out = Path(cfg["out"])
    echo_config(out, "sample", cfg)
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    if cfg["dataset"]:
        ds = Dataset(cfg["dataset"])
        if tuple(ds.res) != (mc.height, mc.width):
            raise UsageError(f"dataset resolution {ds.res} does not match the model")
        for rec in ds.scenes:
            n = min(cfg["views"], len(rec.rig))
            rig = rec.rig.subset(tuple(range(n)))
            vids = generate(model, [rig], [_prompt(rec.prompt, mc)], ds.frames, rng, cfg["steps"],
                            cfg["text_scale"], cfg["shared_noise"])[0]
            d = out / rec.scene_id
            d.mkdir(parents=True, exist_ok=True)
            save_tensor(d / "videos.scmt", vids)
            write_cams_file(d / "cams.txt", rig)
            write_grids(d, vids)
            print(f"{rec.scene_id}: {n} views")
        return 0
    if not cfg["cams"]:
        raise UsageError("sample needs --cams or --dataset")
    rig = read_cams_file(cfg["cams"], mc.height, mc.width)
    vids = generate(model, [rig], [_prompt(cfg["prompt"], mc)], cfg["frames"], rng, cfg["steps"],
                    cfg["text_scale"], cfg["shared_noise"])[0]
    save_tensor(out / "videos.scmt", vids)
    write_grids(out, vids)
    print(f"wrote {len(rig)} views x {cfg['frames']} frames to {out}")
    return 0


def cmd_rerender(cfg: dict) -> int:
    model = load_checkpoint_model(cfg["checkpoint"])
    mc = model.cfg
    out = Path(cfg["out"])
    echo_config(out, "rerender", cfg)
    raw = load_tensor(cfg["input"])
    video = raw.astype(np.float64)
    if video.ndim != 4 or video.shape[1:] != (mc.channels, mc.height, mc.width):
        raise UsageError(f"input video {video.shape} does not match the model resolution "
                         f"({mc.channels}, {mc.height}, {mc.width})")
    rig = read_cams_file(cfg["cams"], mc.height, mc.width)
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    vids = rerender(model, video, rig, _prompt(cfg["prompt"], mc), rng, cfg["steps"],
                    GuidanceWeights(cfg["s_video"], cfg["s_text"]), cfg["shared_noise"])
    if cfg["keep"]:
        vids = vids[list(cfg["keep"])]
    # keep the reference view in the input's own precision so it round-trips exactly
    save_tensor(out / "videos.scmt", vids, "float32" if raw.dtype == np.float32 else "float64")
    write_grids(out, vids)
    print(f"wrote {len(vids)} views to {out}")
    return 0


def cmd_eval(cfg: dict) -> int:
    gen = Path(cfg["gen"])
    ds = Dataset(cfg["data"])
    reports = []
    for rec in ds.scenes:
        d = gen / rec.scene_id
        if not (d / "videos.scmt").exists():
            raise UsageError(f"generated directory has no output for scene {rec.scene_id}")
        vids = load_tensor(d / "videos.scmt").astype(np.float64)
        n = vids.shape[0]
        rig = rec.rig.subset(tuple(range(n)))
        corr = rec.correspondences[:, :, :n]
        matcher = metrics.BlockMatcher() if cfg["matcher"] == "block" else metrics.GroundTruthMatcher(corr, cfg["tol"])
        reports.append(metrics.evaluate_scene(rec.scene_id, vids, rig, corr, cfg["tol"], matcher))
    report = metrics.summarize(reports)
    out = Path(cfg["out"]) if cfg["out"] else gen / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    echo_config(out.parent, "eval", cfg)
    print(report.table())
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    report = desk_gradcheck(cfg["probes"], cfg["seed"], perturb=cfg["perturb"])
    print(report.table())
    ok = report.passed(cfg["tol"])
    print(("PASS" if ok else "FAIL") + f" max relative error {report.max_error:.3e} (tol {cfg['tol']:.0e})")
    if cfg["out"]:
        echo_config(Path(cfg["out"]), "gradcheck", cfg)
        (Path(cfg["out"]) / "gradcheck.txt").write_text(report.table() + "\n")
    return 0 if ok else 1


HANDLERS = {"forge": cmd_forge, "train": cmd_train, "sample": cmd_sample, "rerender": cmd_rerender,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syncam", description="Synchronized multi-view video generation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="file of key = value lines")
        for k, key in keys.items():
            p.add_argument("--" + k.replace("_", "-"), dest=k, default=None,
                           help=key.help + (f" (default {key.default})" if key.default not in (None, "") else ""))
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, flags)
        return HANDLERS[args.command](cfg)
    except (UsageError, ConfigError, DatasetError) as e:
        print(f"syncam {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, FormatError, geo.GeometryError, metrics.EmptyCorrespondenceError) as e:
        print(f"syncam {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
