import csv
import json

import numpy as np
import pytest

from egojoint import cli, container, pipeline as pl
from egojoint.checkpoint import load_checkpoint, save_checkpoint
from egojoint.config import ExperimentConfig, OptimConfig, SamplingConfig, VaeConfig, apply_overrides
from egojoint.kinematics import encode_head_centric, encode_root_centric


def tiny(data, stage="vae", **kw):
    cfg = ExperimentConfig(
        stage=stage,
        data=str(data),
        vae=VaeConfig(channels=(16, 16, 16), groups=4),
        optim=OptimConfig(steps=6, warmup=2, batch_size=4),
        sampling=SamplingConfig(steps=2),
    )
    return apply_overrides(cfg, [f"{k}={json.dumps(v)}" for k, v in kw.items()])


@pytest.fixture(scope="module")
def chain(tmp_path_factory, toy_data_path):
    root = tmp_path_factory.mktemp("chain")
    vae = pl.run_stage1(tiny(toy_data_path), root / "s1")
    s2 = pl.run_stage2(tiny(toy_data_path, "t2m_pretrain"), vae, root / "s2")
    s3 = pl.run_stage3(tiny(toy_data_path, "joint"), s2, root / "s3")
    return dict(root=root, vae=vae, s2=s2, s3=s3, data=toy_data_path)


# --------------------------------------------------------------------------
# configuration


def test_config_round_trip_and_overrides(tmp_path):
    cfg = apply_overrides(ExperimentConfig(), ["model.use_mask=false", "optim.lr=0.01", 'stage="joint"', "vae.channels=[8,8,8]"])
    assert cfg.model.use_mask is False and cfg.optim.lr == 0.01 and cfg.stage == "joint"
    assert cfg.vae.channels == (8, 8, 8)
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(KeyError):
        apply_overrides(cfg, ["model.nope=1"])
    with pytest.raises(ValueError):
        apply_overrides(cfg, ["just-a-word"])
    with pytest.raises(ValueError):
        ExperimentConfig(stage="finetune")
    with pytest.raises(ValueError):
        ExperimentConfig(seed=None)
    with pytest.raises(ValueError):
        ExperimentConfig(representation="pelvis")


def test_variants_are_config_only():
    for name, ov in pl.VARIANTS.items():
        cfg = apply_overrides(ExperimentConfig(), ov)
        assert (cfg.representation == "root") == (name == "w/o MR")
        assert cfg.model.use_mask == (name != "w/o IM")
        assert cfg.asynchronous == (name != "w/o AD")


def test_relative_paths_resolve_under_run_root(tmp_path):
    assert pl.resolve("a/b") == tmp_path / "runs" / "a" / "b"
    assert pl.resolve(tmp_path / "x") == tmp_path / "x"


# --------------------------------------------------------------------------
# checkpoints


def test_resave_is_byte_identical(chain, tmp_path):
    for name in ("vae", "s2", "s3"):
        ck = load_checkpoint(chain[name])
        out = tmp_path / f"{name}.egtw"
        save_checkpoint(out, ck)
        assert container.payload_bytes(out) == container.payload_bytes(chain[name])
        assert load_checkpoint(out).tensor_hash() == ck.tensor_hash()


def test_provenance_chain(chain):
    stages = [p["stage"] for p in load_checkpoint(chain["s3"]).provenance]
    assert stages == ["vae", "t2m_pretrain", "joint"]
    assert load_checkpoint(chain["s3"]).extra["vae"] == str(chain["vae"])


def test_stage1_identical_seeds_identical_checkpoints(chain, tmp_path):
    again = pl.run_stage1(tiny(chain["data"]), tmp_path / "again")
    assert load_checkpoint(again).tensor_hash() == load_checkpoint(chain["vae"]).tensor_hash()
    other = pl.run_stage1(tiny(chain["data"], seed=1), tmp_path / "other")
    assert load_checkpoint(other).tensor_hash() != load_checkpoint(chain["vae"]).tensor_hash()


def test_stage1_resume_continues_exactly(chain, tmp_path):
    cfg = tiny(chain["data"])
    half = pl.run_stage1(cfg, tmp_path / "r", stop_at=3)
    assert load_checkpoint(half).step == 3
    done = pl.run_stage1(cfg, tmp_path / "r", resume=half)
    ck = load_checkpoint(done)
    assert ck.step == 6
    assert ck.tensor_hash() == load_checkpoint(chain["vae"]).tensor_hash()
    steps = [int(r["step"]) for r in pl.read_csv(tmp_path / "r" / "stage1_loss.csv")]
    assert steps == list(range(1, 7))
    assert (tmp_path / "r" / "stage1_loss.png").exists()


def test_stage2_resume_continues_exactly(chain, tmp_path):
    cfg = tiny(chain["data"], "t2m_pretrain")
    half = pl.run_stage2(cfg, chain["vae"], tmp_path / "r", stop_at=2)
    done = pl.run_stage2(cfg, chain["vae"], tmp_path / "r", resume=half)
    assert load_checkpoint(done).tensor_hash() == load_checkpoint(chain["s2"]).tensor_hash()


def test_stage3_resume_continues_exactly(chain, tmp_path):
    cfg = tiny(chain["data"], "joint")
    half = pl.run_stage3(cfg, chain["s2"], tmp_path / "r", stop_at=4)
    done = pl.run_stage3(cfg, chain["s2"], tmp_path / "r", resume=half)
    assert load_checkpoint(done).step == 6
    assert load_checkpoint(done).tensor_hash() == load_checkpoint(chain["s3"]).tensor_hash()


# --------------------------------------------------------------------------
# stage contracts


def dit_tensors(path):
    return {k: v for k, v in load_checkpoint(path).tensors.items() if k.startswith("dit/")}


def test_stage2_freezes_everything_but_the_motion_branch(chain):
    cfg = tiny(chain["data"], "t2m_pretrain")
    init = pl.build_dit(cfg.model, cfg.seed)
    motion = {id(p) for p in pl.stage2_trainable(init)}
    motion_names = {"dit/" + n for n, p in init.named_parameters() if id(p) in motion}
    before = {"dit/" + k: v.numpy() for k, v in init.state_dict().items()}
    after = dit_tensors(chain["s2"])
    assert set(before) == set(after)
    changed = {k for k in before if not np.array_equal(before[k], after[k])}
    assert changed and changed <= motion_names
    frozen = [k for k in before if k not in motion_names]
    assert any(k.startswith("dit/text") for k in frozen)
    for k in frozen:
        assert np.array_equal(before[k], after[k]), k


def test_stage2_loss_has_no_video_term(chain):
    rows = pl.read_csv(chain["root"] / "s2" / "stage2_loss.csv")
    assert all(r["loss_v"] == "" for r in rows)
    assert all(r["loss_v"] != "" for r in pl.read_csv(chain["root"] / "s3" / "stage3_loss.csv"))


def test_stage3_initialises_from_stage2_weights(chain, tmp_path):
    init = pl.run_stage3(tiny(chain["data"], "joint"), chain["s2"], tmp_path / "s3", stop_at=0)
    a, b = dit_tensors(chain["s2"]), dit_tensors(init)
    assert load_checkpoint(init).tensor_hash(list(a)) == load_checkpoint(chain["s2"]).tensor_hash(list(a))
    assert set(a) == set(b)


def test_stage3_freezes_only_the_text_table(chain):
    a, b = dit_tensors(chain["s2"]), dit_tensors(chain["s3"])
    for k in a:
        if k.startswith("dit/text_table"):
            assert np.array_equal(a[k], b[k])
    assert any(not np.array_equal(a[k], b[k]) for k in a if "video" in k)


def test_stage2_throughput_exceeds_stage3(chain):
    assert load_checkpoint(chain["s2"]).extra["tokens_per_second"] > 0
    cfg2, cfg3 = tiny(chain["data"], "t2m_pretrain", **{"optim.steps": 20}), tiny(chain["data"], "joint", **{"optim.steps": 20})
    vae, _ = pl.load_vae(chain["vae"])
    samples, _, _ = pl.load_samples(chain["data"])
    data = pl.encode_latents(samples, vae, "head", cfg2.model.text_len)
    model = pl.build_dit(cfg2.model, 0)
    r2 = pl.train_dit(model, data, cfg2, 2, pl.stage2_trainable(model))
    r3 = pl.train_dit(model, data, cfg3, 3, pl.stage3_trainable(model))
    assert r2.samples_per_second > r3.samples_per_second


def test_stage3_eval_cadence_report(chain, tmp_path):
    cfg = tiny(chain["data"], "joint", eval_every=3, eval_data=str(chain["data"]))
    pl.run_stage3(cfg, chain["s2"], tmp_path / "e")
    with open(tmp_path / "e" / "stage3_eval.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["step"] for r in rows] == ["3", "6"]
    assert set(pl.METRIC_COLUMNS) <= set(rows[0])


@pytest.mark.parametrize("variant", ["w/o IM", "w/o AD"])
def test_ablation_variants_train(chain, tmp_path, variant):
    ov = ["stage=\"joint\""] + pl.VARIANTS[variant]
    cfg = apply_overrides(tiny(chain["data"]), ov)
    path = pl.run_stage3(cfg, chain["s2"], tmp_path / "v")
    assert load_checkpoint(path).step == 6
    assert pl.evaluate_run(tmp_path / "v", chain["data"], "tv2m", steps=2)["TransErr"] != "N/A"


def test_root_centric_variant_chain(chain, tmp_path):
    d = chain["data"]
    vae = pl.run_stage1(tiny(d, representation="root"), tmp_path / "r")
    s2 = pl.run_stage2(tiny(d, "t2m_pretrain", representation="root"), vae, tmp_path / "r")
    pl.run_stage3(tiny(d, "joint", representation="root"), s2, tmp_path / "r")
    agg = pl.evaluate_run(tmp_path / "r", d, "tv2m", steps=2)
    assert isinstance(agg["TransErr"], float) or agg["failed"] == 8


# --------------------------------------------------------------------------
# generation and evaluation


def test_generate_modes_and_determinism(chain):
    model, vae, stats, cfg = pl.load_generator(chain["s3"])
    samples, sk, _ = pl.load_samples(chain["data"])
    few = samples[:3]
    for mode in ("t2vm", "tm2v", "tv2m"):
        a = pl.generate(model, vae, stats, cfg, few, mode, sk, seed=1, steps=2)
        b = pl.generate(model, vae, stats, cfg, few, mode, sk, seed=1, steps=2)
        assert len(a) == 3
        if mode != "tm2v":
            np.testing.assert_array_equal(a[0].features, b[0].features)
        if mode != "tv2m":
            assert a[0].video.shape == few[0].video.shape
            np.testing.assert_array_equal(a[0].video, b[0].video)


@pytest.mark.parametrize("rep", ["head", "root"])
def test_ground_truth_end_to_end(toy_samples, skeleton, rep):
    enc = encode_head_centric if rep == "head" else encode_root_centric
    gen = [pl.decode_features(enc(s.motion).features, rep, skeleton, s.motion.fps) for s in toy_samples]
    rows = pl.evaluate_samples(toy_samples, gen, skeleton)
    for r in rows:
        assert r["TransErr"] < 1e-6 and r["RotErr"] < 1e-6 and abs(r["HandScore"] - 1.0) < 1e-6
    agg = pl.aggregate(rows, toy_samples)
    assert agg["M-FID"] < 1e-6 and agg["failed"] == 0
    assert agg["I-FID"] == "N/A" and agg["FVD"] == "N/A"


def test_generated_file_round_trip(chain, tmp_path, skeleton):
    model, vae, stats, cfg = pl.load_generator(chain["s3"])
    samples, sk, _ = pl.load_samples(chain["data"])
    gen = pl.generate(model, vae, stats, cfg, samples[:2], "t2vm", sk, steps=2)
    meta = {"representation": "head", "fps": 4.0, "skeleton": sk.to_dict()}
    pl.write_generated(tmp_path / "g.egtw", gen, meta)
    back, m = pl.read_generated(tmp_path / "g.egtw")
    assert m["count"] == 2
    np.testing.assert_array_equal(back[1].features, gen[1].features)
    np.testing.assert_array_equal(back[1].video, gen[1].video)


# --------------------------------------------------------------------------
# reports


def test_report_rows_and_missing_runs(chain, tmp_path):
    run = tmp_path / "full"
    pl.run_stage3(tiny(chain["data"], "joint"), chain["s2"], run)
    pl.evaluate_run(run, chain["data"], "tv2m", steps=2)
    one = pl.report({"full": run}, tmp_path / "one.csv")
    assert len(one) == 1 and isinstance(one[0]["TransErr"], float)
    four = pl.report({"full": run, "w/o MR": tmp_path / "a", "w/o IM": tmp_path / "b", "w/o AD": tmp_path / "c"}, tmp_path / "four.csv")
    assert [r["variant"] for r in four] == ["full", "w/o MR", "w/o IM", "w/o AD"]
    assert all(r[c] == "missing" for r in four[1:] for c in pl.METRIC_COLUMNS)
    assert four[0]["I-FID"] == "N/A"
    with open(tmp_path / "four.csv", newline="") as f:
        assert next(csv.reader(f)) == ["variant", *pl.METRIC_COLUMNS]
    first = (tmp_path / "four.csv").read_bytes()
    pl.report({"full": run, "w/o MR": tmp_path / "a", "w/o IM": tmp_path / "b", "w/o AD": tmp_path / "c"}, tmp_path / "four.csv")
    assert (tmp_path / "four.csv").read_bytes() == first
    assert (tmp_path / "four.png").exists()


# --------------------------------------------------------------------------
# command line


def run_cli(*argv):
    assert cli.main([str(a) for a in argv]) == 0


def test_cli_verbs(tmp_path, capsys):
    d = tmp_path / "runs"
    data = d / "data.egtw"
    run_cli("gen-data", "--out", data, "--count", 2, "--templates", "walk-forward,crouch")
    sets = ["--set", "vae.channels=[16,16,16]", "--set", "vae.groups=4", "--set", "optim.steps=3", "--set", "optim.warmup=1"]
    run_cli("train-vae", "--data", data, "--out", d / "r", *sets)
    run_cli("train-vae", "--data", data, "--out", d / "r2", "--stop-at", 2, *sets)
    run_cli("train-dit", "--stage", 2, "--data", data, "--init", d / "r" / "vae.egtw", "--out", d / "r", *sets)
    run_cli("train-dit", "--stage", 3, "--data", data, "--init", d / "r" / "stage2.egtw", "--out", d / "r", *sets)
    run_cli("train-dit", "--stage", 3, "--no-mask", "--data", data, "--init", d / "r" / "stage2.egtw", "--out", d / "nm", *sets)
    assert load_checkpoint(d / "nm" / "stage3.egtw").config["model"]["use_mask"] is False
    for mode in ("t2vm", "tv2m", "tm2v"):
        run_cli("sample", "--mode", mode, "--ckpt", d / "r" / "stage3.egtw", "--init-sample", data, "--steps", 2, "--out", d / mode)
    assert (d / "t2vm" / "video_000.png").exists() and (d / "t2vm" / "metadata.json").exists()
    run_cli("sample", "--mode", "tv2m", "--ckpt", d / "r" / "stage3.egtw", "--init-sample", data, "--index", 1, "--steps", 2,
            "--prompt", "crouch", "--out", d / "one")
    capsys.readouterr()
    run_cli("evaluate", "--data", data, "--gen", d / "tv2m", "--metrics", "trans,rot,hand", "--report", d / "ev.csv")
    agg = json.loads(capsys.readouterr().out)
    assert isinstance(agg["TransErr"], float) and agg["M-FID"] == "N/A"
    run_cli("evaluate", "--data", data, "--gen", d / "one", "--pose-provider", "perturbed", "--metrics", "trans,rot")
    run_cli("evaluate", "--data", data, "--gen", d / "r", "--steps", 2)
    assert (d / "r" / "eval_tv2m.json").exists()
    run_cli("report", "--runs", f"full={d / 'r'}", f"w/o IM={d / 'nm'}", "--out", d / "report.csv")
    rows = list(csv.DictReader(open(d / "report.csv")))
    assert rows[0]["variant"] == "full" and rows[1]["TransErr"] == "missing"
    run_cli("mask-dump", "--out", d / "mask")
    assert (d / "mask.csv").exists() and (d / "mask.png").exists()


def test_cli_rejects_unknown_verb_and_bad_index(toy_data_path, chain):
    with pytest.raises(SystemExit):
        cli.main(["fly"])
    with pytest.raises(SystemExit, match="outside"):
        cli.main(["sample", "--mode", "tv2m", "--ckpt", str(chain["s3"]), "--init-sample", str(toy_data_path), "--index", "99",
                  "--out", "x"])
