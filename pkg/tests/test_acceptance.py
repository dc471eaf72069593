"""The ten acceptance criteria, each printing one PASS/FAIL line with its measurements.

Criteria 9 and 10 train the three stages at toy dimensions (tens of
minutes on a laptop CPU); those runs are cached in module fixtures.
"""
import time

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from egojoint import diffusion as dm, dit, kinematics as k, metrics as M, pipeline as pl, synth, vae as V
from egojoint.camera import Se3Trajectory
from egojoint.checkpoint import load_checkpoint
from egojoint.config import ExperimentConfig, apply_overrides
from egojoint.dit import JointBlock, JointDiT
from egojoint.mask import TokenLayout, build_interaction_mask, latent_permissions

from helpers import MSHAPE, T, TINY, VSHAPE, StubModel, block_streams, call, fd_check, randn, tiny_inputs
from oracles import frechet_eig, frechet_sqrtm, mask_permissions_bruteforce, quaternion_angle_deg

ABLATION_SEEDS = (0, 1, 2)
SAMPLING_SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        if tr is not None:
            tr.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def within(t0, limit_s):
    dt = time.perf_counter() - t0
    return dt < limit_s, f"{dt:.1f}s"


# --------------------------------------------------------------------------


def test_criterion_01_representation_round_trip(skeleton, verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(1000):
        m = synth.random_motion(skeleton, 9, np.random.default_rng(seed))
        dec = k.decode_head_centric(k.encode_head_centric(m), skeleton)
        rot, pos = m.global_transforms()
        h = skeleton.head_index
        truth = (pos - pos[0, h]) @ rot[0, h]
        worst = max(worst, float(np.abs(dec.global_transforms()[1] - truth).max()))
    fast, dt = within(t0, 60)
    verdict(1, worst < 1e-5 and fast, f"max position error {worst:.2e} m over 1000 motions ({dt})")


def test_criterion_02_head_pose_probe(skeleton, verdict):
    t0 = time.perf_counter()
    sigma = 0.01
    exact = []
    noisy = {"head": [], "root": []}
    lengths = (9, 17, 33, 65)
    for N in lengths:
        per = {"head": [], "root": []}
        for seed in range(20):
            m = synth.generate_motion("walk-forward 2 then turn-left 90", skeleton, seed=seed, n_frames=N, fps=(N - 1) / 4.0)
            for kind, enc in (("head", k.encode_head_centric), ("root", k.encode_root_centric)):
                f = enc(m).features
                if kind == "head":
                    exact.append(max(k.head_pose_probe(kind, f, skeleton, m)))
                f = f + np.random.default_rng(seed).normal(0.0, sigma, f.shape)
                per[kind].append(k.head_pose_probe(kind, f, skeleton, m)[0])
        for kind in per:
            noisy[kind].append(float(np.mean(per[kind])))
    head, root = np.array(noisy["head"]), np.array(noisy["root"])
    ok = (
        max(exact) < 1e-5
        and bool(np.all(np.diff(root) > 0))
        and head.max() < 2.5 * sigma
        and head.max() - head.min() < 0.2 * sigma
        and root[-1] > 3 * head[-1]
    )
    fast, dt = within(t0, 60)
    verdict(
        2,
        ok and fast,
        f"direct read {max(exact):.1e}; noisy translation error by length {list(lengths)}: "
        f"head {np.round(head, 4).tolist()} root {np.round(root, 4).tolist()} ({dt})",
    )


def test_criterion_03_interaction_mask(verdict):
    t0 = time.perf_counter()
    checked = 0
    for c in (1, 2, 4, 8):
        for r in (1, 2, 3):
            for F_v in range(1, 32 // c + 2):
                F_m = r * (F_v - 1) + 1
                got, want = latent_permissions(F_v, F_m, c, r), mask_permissions_bruteforce(F_v, F_m, c, r)
                assert np.array_equal(got[0], want[0]) and np.array_equal(got[1], want[1]), (F_v, F_m, c, r)
                checked += 1
    v2m, m2v = latent_permissions(11, 21, 4, 2)
    bv2m, bm2v = mask_permissions_bruteforce(11, 21, 4, 2)
    ref = np.array_equal(v2m, bv2m) and np.array_equal(m2v, bm2v) and bool(v2m[0, 0] and m2v[0, 0])
    lay = TokenLayout(4, 11, 4, 21)
    tok = build_interaction_mask(lay).allowed[lay.video, lay.motion]
    ref = ref and np.array_equal(tok[::4], v2m)
    fast, dt = within(t0, 60)
    verdict(3, ref and fast, f"{checked} configurations with N_v <= 32 plus the 11/21 layout and the first-frame cell ({dt})")


def test_criterion_04_gradients(float64, verdict):
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    checked = []

    q, kk, v = (torch.randn(1, 2, 6, 4, generator=g).requires_grad_() for _ in range(3))
    allowed = (torch.rand(6, 6, generator=g) < 0.5) | torch.eye(6, dtype=torch.bool)
    w = torch.randn(1, 2, 6, 4, generator=g)
    fd_check(lambda: (dit.joint_attention(q, kk, v, allowed) * w).sum(), [("q", q), ("k", kk), ("v", v)])
    checked.append("masked attention")

    pos = torch.randint(0, 5, (6, 3), generator=g)
    dims = dit.rope_dims(4)
    fd_check(lambda: (dit.joint_attention(dit.apply_rope(q, pos, dims), dit.apply_rope(kk, pos, dims), v) * w).sum(),
             [("q", q), ("k", kk)])
    checked.append("RoPE path")

    torch.manual_seed(1)
    blk = JointBlock(TINY, with_motion=True)
    streams, y = block_streams(TINY)
    mask = (torch.rand(6, 6, generator=g) < 0.5) | torch.eye(6, dtype=torch.bool)
    ws = {n: torch.randn_like(s) for n, s in streams.items()}
    fd_check(lambda: sum((o * ws[n]).sum() for n, o in blk(streams, y, mask).items()), list(blk.named_parameters()))
    checked.append("AdaLN, gate and MLP block")

    torch.manual_seed(2)
    groups = V.loss_groups("head", 3)
    Fd = k.head_centric_width(3)
    vae = V.MotionVAE(Fd, V.VaeConfig(channels=(8, 10, 12), latent_channels=4, groups=2))
    x, noise = torch.randn(2, 9, Fd), torch.randn(2, 3, 4)

    def vae_objective():
        recon, mean, logvar, _ = vae(x, noise=noise)
        return V.vae_loss(x, recon, mean, logvar, 0.1, groups)[0]

    fd_check(vae_objective, list(vae.named_parameters()), max_entries=16)
    checked.append("causal conv VAE")

    torch.manual_seed(3)
    model = JointDiT(TINY)
    zv, zm, text, tv, tm = tiny_inputs(TINY)
    drop = torch.tensor([True, False])
    wv, wm = torch.randn_like(zv), torch.randn_like(zm)

    def full():
        ev, em = model(zv, zm, text, tv, tm, drop)
        return (ev * wv).sum() + (em * wm).sum()

    fd_check(full, [(n, p) for n, p in model.named_parameters() if p.requires_grad], max_entries=12)
    checked.append("full transformer")
    fast, dt = within(t0, 300)
    verdict(4, fast, f"relative error < 1e-3 for {', '.join(checked)} ({dt})")


def test_criterion_05_vae_causality(verdict):
    t0 = time.perf_counter()
    torch.manual_seed(0)
    model = V.MotionVAE(5, V.VaeConfig(channels=(8, 10, 12), latent_channels=4, groups=2))
    probes = 0
    for N in (5, 9, 13, 17, 21):
        x = torch.randn(2, N, 5)
        mean, _ = model.encode(x)
        for f in range(N):
            xp = x.clone()
            xp[:, f] += torch.randn(2, 5)
            first = -(-f // 4)
            mp, _ = model.encode(xp)
            assert torch.equal(mp[:, :first], mean[:, :first]) and not torch.equal(mp[:, first], mean[:, first]), (N, f)
            probes += 1
        z = torch.randn(2, (N - 1) // 4 + 1, 4)
        out = model.decode(z)
        for latent in range(z.shape[1]):
            zp = z.clone()
            zp[:, latent] += torch.randn(2, 4)
            first = 0 if latent == 0 else 4 * (latent - 1) + 1
            op = model.decode(zp)
            assert torch.equal(op[:, :first], out[:, :first]) and not torch.equal(op[:, first], out[:, first]), (N, latent)
            probes += 1
    fast, dt = within(t0, 60)
    verdict(5, fast, f"{probes} single-frame perturbations respect the causal receptive field ({dt})")


def test_criterion_06_guidance_algebra(verdict):
    t0 = time.perf_counter()
    one, zero = dm.GuidanceScales(1, 1, 1), dm.GuidanceScales(0, 0, 0)
    worst = 0.0
    for seed in range(100):
        g = torch.Generator().manual_seed(seed)
        B = 2
        text = torch.randint(1, 9, (B, 4), generator=g)
        t = int(torch.randint(1, T, (1,), generator=g))
        model = StubModel(seed)
        zv, zm, zv0, zm0, zvT, zmT = (randn((B, *s), g) for s in (VSHAPE, MSHAPE) * 3)
        pairs = [
            (dm.cfg_tm2v(model, zv, zm0, zmT, text, t, T, one), call(model, zv, zm0, text, t, 0, False)[0]),
            (dm.cfg_tm2v(model, zv, zm0, zmT, text, t, T, zero), call(model, zv, zmT, text, t, T, True)[0]),
            (dm.cfg_tv2m(model, zm, zv0, zvT, text, t, T, one), call(model, zv0, zm, text, 0, t, False)[1]),
            (dm.cfg_tv2m(model, zm, zv0, zvT, text, t, T, zero), call(model, zvT, zm, text, T, t, True)[1]),
        ]
        ev1, em1 = dm.cfg_t2vm(model, zv, zm, zvT, zmT, text, t, T, one)
        ev0, em0 = dm.cfg_t2vm(model, zv, zm, zvT, zmT, text, t, T, zero)
        full = call(model, zv, zm, text, t, t, False)
        pairs += [(ev1, full[0]), (em1, full[1]),
                  (ev0, call(model, zv, zmT, text, t, T, True)[0]), (em0, call(model, zvT, zm, text, T, t, True)[1])]
        worst = max(worst, max(float((a - b).abs().max()) for a, b in pairs))
    fast, dt = within(t0, 60)
    verdict(6, worst < 1e-6 and fast, f"max deviation {worst:.1e} over 100 stub models, three samplers, w in {{0, 1}} ({dt})")


def test_criterion_07_metric_oracles(verdict):
    t0 = time.perf_counter()
    out = {}
    L = 11
    rng = np.random.default_rng(0)
    rot = Rotation.random(L, random_state=0).as_matrix()
    pos = np.cumsum(rng.normal(0, 0.3, (L, 3)), axis=0)
    head = Se3Trajectory(rot, pos, np.arange(L) / 2.0)
    al = M.align_trajectories(head, head)
    out["identical"] = max(M.trans_err(al.aligned, head), M.rot_err(al.aligned, head))
    scale_err = 0.0
    for s in rng.uniform(0.2, 5.0, 20):
        cam = Se3Trajectory(rot, pos[0] + s * (pos - pos[0]), head.timestamps)
        scale_err = max(scale_err, abs(M.align_trajectories(cam, head).scale - 1 / s))
    out["scale"] = scale_err
    ra, rb = Rotation.random(500, random_state=1).as_matrix(), Rotation.random(500, random_state=2).as_matrix()
    t = np.arange(500, dtype=float)
    rot_gap = abs(M.rot_err(Se3Trajectory(ra, np.zeros((500, 3)), t), Se3Trajectory(rb, np.zeros((500, 3)), t))
                  - quaternion_angle_deg(ra, rb).mean())
    out["rot_deg"] = rot_gap
    shift = abs(M.frechet_from_stats(np.zeros(4), np.eye(4), np.full(4, 1.5), np.eye(4)) - 9.0)
    fr = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        A, Bm = r.normal(size=(4, 4)), r.normal(size=(4, 4))
        ca, cb = A @ A.T + 0.1 * np.eye(4), Bm @ Bm.T + 0.1 * np.eye(4)
        ma, mb = r.normal(size=4), r.normal(size=4)
        got = M.frechet_from_stats(ma, ca, mb, cb)
        fr = max(fr, abs(got - frechet_eig(ma, ca, mb, cb)), abs(got - frechet_sqrtm(ma, ca, mb, cb)))
    out["frechet"] = max(shift, fr)
    hs = 0.0
    for code in range(256):
        bits = np.array([(code >> i) & 1 for i in range(8)], bool)
        p, v = bits[:4], bits[4:]
        tp, fp, fn = int((p & v).sum()), int((p & ~v).sum()), int((~p & v).sum())
        want = 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        hs = max(hs, abs(M.hand_score(np.stack([p, v], 1), np.stack([v, p], 1)) - want))
    out["handscore"] = hs
    ok = all(val < 1e-6 for val in out.values())
    fast, dt = within(t0, 60)
    verdict(7, ok and fast, " ".join(f"{n}={val:.1e}" for n, val in out.items()) + f" ({dt})")


def test_criterion_08_ground_truth_end_to_end(skeleton, verdict):
    t0 = time.perf_counter()
    samples = synth.generate_dataset(list(synth.TEMPLATE_KINDS), 24, scene_seed=3, seed=5)
    K = synth.SynthConfig().intrinsics
    te = re = hs = 0.0
    for s in samples:
        a, b = M.pose_errors(M.gt_pose_provider(s), s.motion)
        score = M.hand_score(M.hand_presence_synthetic(s.video), M.hand_visibility(s.motion, K))
        te, re, hs = max(te, a), max(re, b), max(hs, abs(1.0 - score))
    gen = [pl.decode_features(k.encode_head_centric(s.motion).features, "head", skeleton, s.motion.fps) for s in samples]
    rows = pl.evaluate_samples(samples, gen, skeleton)
    pipe = max(max(r["TransErr"], r["RotErr"], abs(1 - r["HandScore"])) for r in rows)
    ok = max(te, re, hs, pipe) < 1e-6
    fast, dt = within(t0, 120)
    verdict(8, ok and fast, f"{len(samples)} samples: TransErr {te:.1e} RotErr {re:.1e} |1-HandScore| {hs:.1e}, "
                            f"through the evaluation pipeline {pipe:.1e} ({dt})")


# --------------------------------------------------------------------------
# desk-scale training


def toy_config(data, stage, seed=0, extra=()):
    return apply_overrides(ExperimentConfig(data=str(data)), [f'stage="{stage}"', f"seed={seed}", *extra])


@pytest.fixture(scope="module")
def desk(tmp_path_factory, toy_data_path):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    vae = pl.run_stage1(toy_config(toy_data_path, "vae"), root / "s0")
    s2 = pl.run_stage2(toy_config(toy_data_path, "t2m_pretrain"), vae, root / "s0")
    s3 = pl.run_stage3(toy_config(toy_data_path, "joint"), s2, root / "s0" / "full")
    return dict(root=root, data=toy_data_path, vae=vae, s2=s2, s3=s3, seconds=time.perf_counter() - t0)


def _losses(desk):
    vae, _ = pl.load_vae(desk["vae"])
    samples, sk, _ = pl.load_samples(desk["data"])
    feats = pl.motion_features([s.motion for s in samples], "head")
    recon = V.reconstruction_errors(vae, feats, "head", sk.joint_count)
    ratios = {}
    for stage, path, init in ((2, desk["s2"], None), (3, desk["s3"], desk["s2"])):
        ck = load_checkpoint(path)
        cfg = ExperimentConfig.from_dict(ck.config)
        data = pl.encode_latents(samples, vae, "head", cfg.model.text_len, pl.LatentStats(**ck.extra["stats"]))
        before = pl.build_dit(cfg.model, cfg.seed) if init is None else pl._load_dit(load_checkpoint(init))
        ratios[stage] = pl.eval_loss(pl._load_dit(ck), data, cfg, stage) / pl.eval_loss(before, data, cfg, stage)
    return recon, ratios


@pytest.mark.slow
def test_criterion_09_desk_scale_training(desk, verdict):
    recon, ratios = _losses(desk)
    ok = max(recon.values()) < 1e-3 and ratios[2] < 0.1 and ratios[3] < 0.1 and desk["seconds"] < 3600
    groups = " ".join(f"{n}={v:.1e}" for n, v in recon.items())
    verdict(9, ok, f"stage 1 MSE {groups}; loss ratio stage 2 {ratios[2]:.3f}, stage 3 {ratios[3]:.3f}; "
                   f"{desk['seconds'] / 60:.1f} min for three stages")


def _trans_err(run_dir, data):
    return float(np.mean([pl.evaluate_run(run_dir, data, "tv2m", seed=s)["TransErr"] for s in SAMPLING_SEEDS]))


@pytest.mark.slow
def test_criterion_10_mask_ablation(desk, verdict):
    data, root = desk["data"], desk["root"]
    results = {}
    for seed in ABLATION_SEEDS:
        d = root / f"s{seed}"
        s2 = desk["s2"] if seed == 0 else pl.run_stage2(toy_config(data, "t2m_pretrain", seed), desk["vae"], d)
        if seed != 0:
            pl.run_stage3(toy_config(data, "joint", seed), s2, d / "full")
        pl.run_stage3(toy_config(data, "joint", seed, ["model.use_mask=false"]), s2, d / "nomask")
        results[seed] = (_trans_err(d / "full", data), _trans_err(d / "nomask", data))
    wins = [full < nomask for full, nomask in results.values()]
    detail = "; ".join(f"seed {s}: full {a:.4f} m vs no-mask {b:.4f} m" for s, (a, b) in results.items())
    verdict(10, all(wins), f"{sum(wins)}/{len(wins)} seeds favour the mask. {detail}")
