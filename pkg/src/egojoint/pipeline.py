"""Three-stage training, sampling and evaluation over run directories.

Run directories hold a config snapshot, checkpoints in the EGTW container,
per-step loss CSVs with plots, evaluation CSVs and a small JSON summary.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import diffusion as dm
from .checkpoint import Checkpoint, load_checkpoint, module_tensors, save_checkpoint
from .config import ExperimentConfig
from .dit import JointDiT, ModelConfig
from .kinematics import (
    HeadCentricRep,
    MotionSequence,
    RootCentricRep,
    Skeleton,
    decode_head_centric,
    decode_root_centric,
    encode_head_centric,
    encode_root_centric,
    head_centric_positions,
    root_centric_head_pose,
    rot6d_to_matrix,
)
from .synth import DatasetReader, Sample, tokenize
from .vae import MotionVAE, vae_train

log = logging.getLogger(__name__)

RUN_ROOT_ENV = "EGOJOINT_RUN_ROOT"
METRIC_COLUMNS = ("I-FID", "FVD", "CLIP-SIM", "M-FID", "R-Prec", "MM-Dist", "TransErr", "RotErr", "HandScore")
VARIANTS = {
    "full": [],
    "w/o MR": ["representation=root"],
    "w/o IM": ["model.use_mask=false"],
    "w/o AD": ["asynchronous=false"],
}


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def resolve(path: str | Path) -> Path:
    """Relative paths are taken under the run root."""
    p = Path(path)
    return p if p.is_absolute() or p.exists() else run_root() / p


# --------------------------------------------------------------------------
# data


def load_samples(path: str | Path) -> tuple[list[Sample], Skeleton, dict]:
    with DatasetReader(resolve(path)) as r:
        return list(r), r.skeleton, r.meta


def motion_features(motions: Sequence[MotionSequence], rep_kind: str) -> np.ndarray:
    enc = encode_head_centric if rep_kind == "head" else encode_root_centric
    return np.stack([enc(m).features for m in motions]).astype(np.float32)


@dataclass
class LatentStats:
    """Scalar standardisation of diffusion latents, fixed from the training set."""

    motion_mean: float
    motion_std: float
    video_mean: float
    video_std: float

    @classmethod
    def fit(cls, z_m: torch.Tensor, z_v: torch.Tensor) -> "LatentStats":
        return cls(float(z_m.mean()), float(z_m.std()), float(z_v.mean()), float(z_v.std()))

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class LatentData:
    z_v: torch.Tensor  # normalised (S, F_v, h, w, C_v)
    z_m: torch.Tensor  # normalised (S, F_m, C_m)
    text: torch.Tensor  # (S, L_t)
    stats: LatentStats


@torch.no_grad()
def encode_latents(samples: Sequence[Sample], vae: MotionVAE, rep_kind: str, text_len: int, stats: LatentStats | None = None) -> LatentData:
    feats = torch.from_numpy(motion_features([s.motion for s in samples], rep_kind))
    z_m, _ = vae.encode(feats)
    z_v = dm.video_to_latent(np.stack([s.video for s in samples]))
    text = torch.from_numpy(np.stack([tokenize(s.text, text_len) for s in samples])).long()
    if stats is None:
        stats = LatentStats.fit(z_m, z_v)
    return LatentData(
        (z_v - stats.video_mean) / stats.video_std,
        (z_m - stats.motion_mean) / stats.motion_std,
        text,
        stats,
    )


# --------------------------------------------------------------------------
# checkpoint plumbing


def optimizer_tensors(opt: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    sd = opt.state_dict()
    tensors = {}
    for idx, st in sd["state"].items():
        for k, v in st.items():
            tensors[f"optim/{idx}/{k}"] = torch.as_tensor(v).detach().numpy().copy()
    return tensors, {"param_groups": sd["param_groups"]}


def optimizer_state(ckpt: Checkpoint) -> dict | None:
    if "optim" not in ckpt.extra:
        return None
    state: dict = {}
    for name, arr in ckpt.tensors.items():
        if name.startswith("optim/"):
            _, idx, k = name.split("/")
            state.setdefault(int(idx), {})[k] = torch.from_numpy(arr.copy())
    return {"state": state, "param_groups": ckpt.extra["optim"]["param_groups"]}


def load_vae(path: str | Path) -> tuple[MotionVAE, Checkpoint]:
    ck = load_checkpoint(resolve(path))
    cfg = ExperimentConfig.from_dict(ck.config)
    vae = MotionVAE(int(ck.extra["feature_dim"]), cfg.vae)
    vae.load_state_dict(ck.state_dict("vae/"))
    vae.eval()
    return vae, ck


def _save_losses(history: list[dict], out_dir: Path, name: str) -> None:
    if not history:
        return
    keys = list(history[0])
    path = out_dir / f"{name}.csv"
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, keys)
        if new:
            w.writeheader()
        w.writerows(history)
    plot_losses(path, out_dir / f"{name}.png")


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_losses(csv_path: Path, png_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(csv_path)
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for k in rows[0]:
        if k.startswith("loss"):
            vals = [float(r[k]) for r in rows if r[k] not in ("", "None")]
            if len(vals) == len(steps):
                ax.plot(steps, vals, label=k, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)


def _prepare_out(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    out = resolve(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


# --------------------------------------------------------------------------
# stage 1


def _end_step(cfg: ExperimentConfig, stop_at: int | None) -> int:
    return cfg.optim.steps if stop_at is None else min(stop_at, cfg.optim.steps)


def run_stage1(cfg: ExperimentConfig, out_dir: str | Path, resume: str | Path | None = None, stop_at: int | None = None) -> Path:
    """Train the motion VAE; writes vae.egtw, stage1_loss.csv and its plot.

    ``stop_at`` ends the run early with a checkpoint that resumes exactly.
    """
    samples, skeleton, _ = load_samples(cfg.data)
    out = _prepare_out(cfg, out_dir)
    feats = motion_features([s.motion for s in samples], cfg.representation)
    model, opt_state, start = None, None, 0
    provenance = []
    if resume is not None:
        model, ck = load_vae(resume)
        opt_state, start = optimizer_state(ck), ck.step
        provenance = list(ck.provenance)
    t0 = time.perf_counter()
    model, opt, history = vae_train(
        feats, cfg.representation, skeleton.joint_count, cfg.vae, cfg.optim, cfg.seed, model, opt_state, start,
        stop_at=stop_at,
    )
    elapsed = time.perf_counter() - t0
    tensors = module_tensors(model, "vae/")
    ot, om = optimizer_tensors(opt)
    tensors.update(ot)
    path = out / "vae.egtw"
    save_checkpoint(
        path,
        Checkpoint(
            tensors,
            cfg.to_dict(),
            _end_step(cfg, stop_at),
            "vae",
            provenance + [{"stage": "vae", "data": str(cfg.data), "seed": cfg.seed}],
            {"feature_dim": feats.shape[-1], "skeleton": skeleton.to_dict(), "optim": om, "seconds": elapsed},
        ),
    )
    _save_losses(history, out, "stage1_loss")
    return path


# --------------------------------------------------------------------------
# stages 2 and 3


def build_dit(mcfg: ModelConfig, seed: int) -> JointDiT:
    torch.manual_seed(seed)
    return JointDiT(mcfg)


def stage2_trainable(model: JointDiT) -> list[torch.nn.Parameter]:
    """Motion branch incl. its AdaLN, input/output projections; all else frozen."""
    return list(model.motion_branch_parameters())


def stage3_trainable(model: JointDiT) -> list[torch.nn.Parameter]:
    return [p for n, p in model.named_parameters() if not n.startswith("text_table")]


def dit_lr(optim, step: int) -> float:
    if step < optim.warmup:
        return optim.lr * (step + 1) / optim.warmup
    return optim.lr


@dataclass
class DitTrainResult:
    history: list[dict]
    optimizer: torch.optim.Optimizer
    tokens_per_second: float
    samples_per_second: float


def train_dit(
    model: JointDiT,
    data: LatentData,
    cfg: ExperimentConfig,
    stage: int,
    params: list[torch.nn.Parameter],
    start_step: int = 0,
    opt_state: dict | None = None,
    on_step: Callable[[int, dict], None] | None = None,
    stop_at: int | None = None,
) -> DitTrainResult:
    """Adam over ``params``; data order and diffusion noise use separate seeded streams."""
    schedule = dm.NoiseSchedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    o = cfg.optim
    opt = torch.optim.Adam(params, lr=o.lr, betas=tuple(o.betas), weight_decay=o.weight_decay)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    trainable = {id(p) for p in params}
    saved = [(p, p.requires_grad) for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad_(id(p) in trainable)
    S = data.z_m.shape[0]
    history = []
    tokens = 0
    per_sample = data.z_m.shape[1] + (0 if stage == 2 else data.z_v[0].numel() // (cfg.model.patch**2 * cfg.model.video_channels))
    model.train()
    t0 = time.perf_counter()
    try:
        for step in range(start_step, _end_step(cfg, stop_at)):
            for g in opt.param_groups:
                g["lr"] = dit_lr(o, step)
            g_data = torch.Generator().manual_seed(cfg.seed * 7919 + 2 * step)
            g_noise = torch.Generator().manual_seed(cfg.seed * 7919 + 2 * step + 1)
            idx = torch.randperm(S, generator=g_data)[: o.batch_size] if S > o.batch_size else torch.arange(S)
            out = dm.diffusion_loss(
                model,
                data.z_m[idx],
                data.text[idx],
                schedule,
                g_noise,
                z_v=None if stage == 2 else data.z_v[idx],
                asynchronous=cfg.asynchronous,
                text_dropout=cfg.text_dropout,
                clamp_first_frame=cfg.clamp_first_frame,
            )
            opt.zero_grad(set_to_none=True)
            out.loss.backward()
            if o.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, o.grad_clip)
            opt.step()
            tokens += len(idx) * per_sample
            rec = {
                "step": step + 1,
                "loss": out.loss.item(),
                "loss_m": out.loss_m.item(),
                "loss_v": "" if out.loss_v is None else out.loss_v.item(),
            }
            history.append(rec)
            if on_step is not None:
                on_step(step + 1, rec)
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)
        model.eval()
    dt = max(time.perf_counter() - t0, 1e-9)
    n_steps = max(_end_step(cfg, stop_at) - start_step, 0)
    return DitTrainResult(history, opt, tokens / dt, n_steps * min(S, o.batch_size) / dt)


@torch.no_grad()
def eval_loss(model: JointDiT, data: LatentData, cfg: ExperimentConfig, stage: int, draws: int = 64, seed: int = 12345) -> float:
    """Mean diffusion loss over a fixed set of (t, noise, dropout) draws.

    Training losses fluctuate with the sampled timesteps; this fixed-draw
    estimate is what before/after comparisons use.
    """
    schedule = dm.NoiseSchedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    was_training = model.training
    model.eval()
    total = 0.0
    for k in range(draws):
        g = torch.Generator().manual_seed(seed + k)
        out = dm.diffusion_loss(
            model, data.z_m, data.text, schedule, g,
            z_v=None if stage == 2 else data.z_v,
            asynchronous=cfg.asynchronous, text_dropout=cfg.text_dropout, clamp_first_frame=cfg.clamp_first_frame,
        )
        total += out.loss.item()
    model.train(was_training)
    return total / draws


def _dit_checkpoint(model, cfg, stage_name, step, provenance, stats, vae_path, opt, extra=None) -> Checkpoint:
    tensors = module_tensors(model, "dit/")
    ot, om = optimizer_tensors(opt)
    tensors.update(ot)
    meta = {"stats": stats.to_dict(), "vae": str(vae_path), "optim": om}
    meta.update(extra or {})
    return Checkpoint(tensors, cfg.to_dict(), step, stage_name, provenance, meta)


def _load_dit(ck: Checkpoint) -> JointDiT:
    cfg = ExperimentConfig.from_dict(ck.config)
    model = JointDiT(cfg.model)
    model.load_state_dict(ck.state_dict("dit/"))
    model.eval()
    return model


def run_stage2(
    cfg: ExperimentConfig, vae_ckpt: str | Path, out_dir: str | Path, resume: str | Path | None = None, stop_at: int | None = None
) -> Path:
    """Text-to-motion pretraining: no video tokens, only the motion branch trains."""
    samples, _, _ = load_samples(cfg.data)
    out = _prepare_out(cfg, out_dir)
    vae, vck = load_vae(vae_ckpt)
    data = encode_latents(samples, vae, cfg.representation, cfg.model.text_len)
    opt_state, start = None, 0
    if resume is not None:
        ck = load_checkpoint(resolve(resume))
        model, opt_state, start = _load_dit(ck), optimizer_state(ck), ck.step
    else:
        model = build_dit(cfg.model, cfg.seed)
    res = train_dit(model, data, cfg, 2, stage2_trainable(model), start, opt_state, stop_at=stop_at)
    path = out / "stage2.egtw"
    prov = list(vck.provenance) + [{"stage": "t2m_pretrain", "data": str(cfg.data), "seed": cfg.seed}]
    save_checkpoint(
        path,
        _dit_checkpoint(model, cfg, "t2m_pretrain", _end_step(cfg, stop_at), prov, data.stats, vae_ckpt, res.optimizer,
                        {"tokens_per_second": res.tokens_per_second}),
    )
    _save_losses(res.history, out, "stage2_loss")
    return path


def run_stage3(
    cfg: ExperimentConfig,
    stage2_ckpt: str | Path,
    out_dir: str | Path,
    resume: str | Path | None = None,
    eval_fn: Callable[[JointDiT, int], dict] | None = None,
    stop_at: int | None = None,
) -> Path:
    """Joint training from the stage-2 weights with the configured mask and timestep mode.

    With ``cfg.eval_every`` > 0 the held-out split is evaluated at that
    cadence (TV2M sampling) and appended to stage3_eval.csv.
    """
    samples, skeleton, _ = load_samples(cfg.data)
    out = _prepare_out(cfg, out_dir)
    src = load_checkpoint(resolve(resume if resume is not None else stage2_ckpt))
    model = build_dit(cfg.model, cfg.seed)
    model.load_state_dict(src.state_dict("dit/"))
    vae_path = src.extra["vae"]
    vae, _ = load_vae(vae_path)
    stats = LatentStats(**src.extra["stats"])
    data = encode_latents(samples, vae, cfg.representation, cfg.model.text_len, stats)
    start, opt_state = (src.step, optimizer_state(src)) if resume is not None else (0, None)

    eval_rows = []
    if cfg.eval_every and eval_fn is None and cfg.eval_data:
        eval_samples, _, _ = load_samples(cfg.eval_data)

        def eval_fn(m, step):
            gen = generate(m, vae, stats, cfg, eval_samples, "tv2m", skeleton, seed=cfg.seed)
            return aggregate(evaluate_samples(eval_samples, gen, skeleton))

    def hook(step, rec):
        if eval_fn is not None and cfg.eval_every and step % cfg.eval_every == 0:
            model.eval()
            row = {"step": step, **eval_fn(model, step)}
            model.train()
            eval_rows.append(row)

    res = train_dit(model, data, cfg, 3, stage3_trainable(model), start, opt_state, hook, stop_at)
    path = out / "stage3.egtw"
    prov = list(src.provenance) + [{"stage": "joint", "data": str(cfg.data), "seed": cfg.seed, "init": str(stage2_ckpt)}]
    save_checkpoint(
        path,
        _dit_checkpoint(model, cfg, "joint", _end_step(cfg, stop_at), prov, stats, vae_path, res.optimizer,
                        {"tokens_per_second": res.tokens_per_second}),
    )
    _save_losses(res.history, out, "stage3_loss")
    if eval_rows:
        write_rows(out / "stage3_eval.csv", eval_rows)
    return path


# --------------------------------------------------------------------------
# generation


@dataclass
class Generated:
    """One generated sample, all poses in the representation's canonical frame."""

    features: np.ndarray | None = None
    motion: MotionSequence | None = None
    head_rot: np.ndarray | None = None  # (N_m + 1, 3, 3)
    head_pos: np.ndarray | None = None
    wrists: tuple | None = None  # (left, right), each (N_m + 1, 3)
    video: np.ndarray | None = None  # (N_v + 1, H, W, 3) uint8
    decode_error: str = ""


def decode_features(features: np.ndarray, rep_kind: str, skeleton: Skeleton, fps: float) -> Generated:
    """Motion, head track and wrists from one feature matrix.

    The head track is read directly where the representation exposes it.
    """
    g = Generated(features=features)
    J = skeleton.joint_count
    lw, rw = skeleton.index("left_wrist"), skeleton.index("right_wrist")
    try:
        if rep_kind == "head":
            rep = HeadCentricRep(features, J)
            g.head_rot, g.head_pos = rot6d_to_matrix(rep.h_r), rep.h_p.copy()
            pos = head_centric_positions(rep, skeleton)
            g.motion = decode_head_centric(rep, skeleton, fps)
        else:
            rep = RootCentricRep(features, J)
            g.motion = decode_root_centric(rep, skeleton, fps)
            g.head_rot, g.head_pos = root_centric_head_pose(rep, skeleton)
            _, pos = g.motion.global_transforms()
        g.wrists = (pos[:, lw], pos[:, rw])
    except ValueError as e:  # degenerate 6D output
        g.decode_error = str(e)
    return g


@torch.no_grad()
def generate(
    model: JointDiT,
    vae: MotionVAE,
    stats: LatentStats,
    cfg: ExperimentConfig,
    samples: Sequence[Sample],
    mode: str,
    skeleton: Skeleton,
    seed: int = 0,
    steps: int | None = None,
    method: str | None = None,
    batch_size: int = 16,
) -> list[Generated]:
    """Sample each conditioning sample once; the first latent frames come from it."""
    sc = cfg.sampling
    schedule = dm.NoiseSchedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    data = encode_latents(samples, vae, cfg.representation, cfg.model.text_len, stats)
    scales = dm.GuidanceScales(sc.w_t, sc.w_v, sc.w_m)
    out: list[Generated] = []
    fps = samples[0].motion.fps
    for s in range(0, len(samples), batch_size):
        sl = slice(s, s + batch_size)
        gen = torch.Generator().manual_seed(seed * 104729 + s)
        res = dm.reverse_sample(
            model,
            mode,
            data.text[sl],
            schedule,
            tuple(data.z_v.shape[1:]),
            tuple(data.z_m.shape[1:]),
            gen,
            steps=steps or sc.steps,
            method=method or sc.method,
            scales=scales,
            z_v0=data.z_v[sl],
            z_m0=data.z_m[sl],
            first_v=data.z_v[sl, :1] if cfg.clamp_first_frame else None,
            first_m=data.z_m[sl, :1] if cfg.clamp_first_frame else None,
            asynchronous=cfg.asynchronous,
        )
        zm = res.z_m if res.z_m is not None else data.z_m[sl]
        feats = vae.decode(zm * stats.motion_std + stats.motion_mean).double().numpy()
        videos = None
        if res.z_v is not None:
            videos = dm.latent_to_video(res.z_v * stats.video_std + stats.video_mean)
        for k in range(feats.shape[0]):
            g = decode_features(feats[k], cfg.representation, skeleton, fps) if res.z_m is not None else Generated()
            if videos is not None:
                g.video = videos[k]
            out.append(g)
    return out


# --------------------------------------------------------------------------
# evaluation


def evaluate_samples(
    samples: Sequence[Sample],
    generated: Sequence[Generated],
    skeleton: Skeleton,
    pose_provider: Callable | None = None,
    intrinsics=None,
    mount: np.ndarray | None = None,
    metrics: Sequence[str] = ("trans", "rot", "hand", "fid", "rprec"),
) -> list[dict]:
    """Per-sample rows; camera from the pose provider, presence from the sample's video.

    A generated sample carrying a video is not SLAM-tracked (no estimator
    exists here), so camera-based metrics always take the provider's track.
    """
    from . import metrics as mt
    from .camera import Se3Trajectory
    from .synth import SynthConfig

    provider = pose_provider or mt.gt_pose_provider
    K = intrinsics or SynthConfig().intrinsics
    rows = []
    for i, (s, g) in enumerate(zip(samples, generated)):
        row: dict = {"index": i, "template": s.template}
        if g.decode_error or g.head_rot is None:
            row["error"] = g.decode_error or "no motion"
            rows.append(row)
            continue
        cam = provider(s, i)
        n = len(g.head_pos)
        hr = g.head_rot if mount is None else g.head_rot @ mount
        head = Se3Trajectory(hr, g.head_pos, np.arange(n) / s.motion.fps)
        head = mt.resample_nearest(head, cam.timestamps)
        if "trans" in metrics or "rot" in metrics:
            al = mt.align_trajectories(cam, head)
            row["TransErr"] = mt.trans_err(al.aligned, head)
            row["RotErr"] = mt.rot_err(al.aligned, head)
        if "hand" in metrics:
            idx = np.arange(0, n, 2)
            vis = mt.visibility_from_arrays(hr[idx], g.head_pos[idx], (g.wrists[0][idx], g.wrists[1][idx]), K)
            pres = mt.hand_presence_synthetic(s.video)
            row["HandScore"] = mt.hand_score(pres, vis)
        rows.append(row)
    if "fid" in metrics or "rprec" in metrics:
        ok = [i for i, g in enumerate(generated) if g.motion is not None]
        gen_desc = np.stack([mt.motion_descriptor(generated[i].motion) for i in ok]) if ok else np.zeros((0, 8))
        for i, d in zip(ok, gen_desc):
            rows[i]["descriptor"] = d
    return rows


def aggregate(rows: Sequence[dict], samples: Sequence[Sample] | None = None) -> dict:
    """Mean per-sample metrics; distribution metrics need ``samples`` and descriptors."""
    from . import metrics as mt

    agg: dict = {c: "N/A" for c in METRIC_COLUMNS}
    for c in ("TransErr", "RotErr", "HandScore"):
        vals = [r[c] for r in rows if c in r]
        if vals:
            agg[c] = float(np.mean(vals))
    desc = [(i, r["descriptor"]) for i, r in enumerate(rows) if "descriptor" in r]
    if samples is not None and len(desc) >= 3:
        gen = np.stack([d for _, d in desc])
        real = np.stack([mt.motion_descriptor(samples[i].motion) for i, _ in desc])
        agg["M-FID"] = mt.frechet_distance(real, gen)
        tp = mt.TemplateTextProvider()
        text = np.stack([tp(samples[i].template) for i, _ in desc])
        agg["R-Prec"], agg["MM-Dist"] = mt.retrieval_metrics(text, gen)
    agg["failed"] = sum(1 for r in rows if "error" in r)
    return agg


def write_rows(path: Path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> None:
    cols = list(columns) if columns else list(dict.fromkeys(k for r in rows for k in r if k != "descriptor"))
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k, "")) for k in cols})


def load_generator(ckpt_path: str | Path) -> tuple[JointDiT, MotionVAE, LatentStats, ExperimentConfig]:
    ck = load_checkpoint(resolve(ckpt_path))
    model = _load_dit(ck)
    vae, _ = load_vae(ck.extra["vae"])
    return model, vae, LatentStats(**ck.extra["stats"]), ExperimentConfig.from_dict(ck.config)


def evaluate_run(run_dir: str | Path, data: str | Path, mode: str = "tv2m", seed: int = 0, steps: int | None = None,
                 pose_provider: Callable | None = None) -> dict:
    """Sample from a run's stage-3 checkpoint on ``data`` and write eval_<mode>.csv + summary."""
    run = resolve(run_dir)
    model, vae, stats, cfg = load_generator(run / "stage3.egtw")
    samples, skeleton, _ = load_samples(data)
    gen = generate(model, vae, stats, cfg, samples, mode, skeleton, seed=seed, steps=steps)
    rows = evaluate_samples(samples, gen, skeleton, pose_provider)
    agg = aggregate(rows, samples)
    write_rows(run / f"eval_{mode}.csv", rows + [{"index": "mean", **{k: v for k, v in agg.items()}}])
    (run / f"eval_{mode}.json").write_text(json.dumps(agg, indent=2))
    return agg


# --------------------------------------------------------------------------
# report


def report(run_dirs: dict[str, str | Path], out_csv: str | Path, mode: str = "tv2m") -> list[dict]:
    """Comparison table from stored eval summaries; missing runs are listed, not filled in."""
    rows = []
    for name, d in run_dirs.items():
        p = resolve(d) / f"eval_{mode}.json"
        if not p.exists():
            rows.append({"variant": name, **{c: "missing" for c in METRIC_COLUMNS}})
            continue
        agg = json.loads(p.read_text())
        rows.append({"variant": name, **{c: agg.get(c, "N/A") for c in METRIC_COLUMNS}})
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, rows, ["variant", *METRIC_COLUMNS])
    plot_report(rows, out.with_suffix(".png"))
    return rows


def plot_report(rows: Sequence[dict], png_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = [c for c in METRIC_COLUMNS if any(isinstance(r.get(c), float) or _is_num(r.get(c)) for r in rows)]
    if not cols:
        return
    fig, axes = plt.subplots(1, len(cols), figsize=(2.4 * len(cols), 2.8), squeeze=False)
    names = [r["variant"] for r in rows]
    for ax, c in zip(axes[0], cols):
        vals = [float(r[c]) if _is_num(r.get(c)) else np.nan for r in rows]
        ax.bar(range(len(vals)), vals)
        ax.set_xticks(range(len(vals)), names, rotation=45, fontsize=7)
        ax.set_title(c, fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)


def _is_num(v) -> bool:
    try:
        float(v)
        return True
    except (TypeError, ValueError):
        return False


# --------------------------------------------------------------------------
# generated-sample files


def write_generated(path: str | Path, generated: Sequence[Generated], meta: dict) -> None:
    from . import container

    arrays = {}
    for k, g in enumerate(generated):
        if g.features is not None:
            arrays[f"{k:06d}/features"] = np.asarray(g.features, dtype=np.float64)
        if g.video is not None:
            arrays[f"{k:06d}/video"] = g.video
    container.write_container(path, arrays, {"kind": "generated", "count": len(generated), **meta})


def read_generated(path: str | Path) -> tuple[list[Generated], dict]:
    from . import container

    with container.ContainerReader(resolve(path)) as r:
        meta = r.meta
        if meta.get("kind") != "generated":
            raise container.FormatError(f"{path} is not a generated-sample file")
        sk = Skeleton.from_dict(meta["skeleton"])
        out = []
        for k in range(meta["count"]):
            name = f"{k:06d}/features"
            g = decode_features(r.read(name), meta["representation"], sk, meta["fps"]) if name in r else Generated()
            if f"{k:06d}/video" in r:
                g.video = r.read(f"{k:06d}/video")
            out.append(g)
    return out, meta
